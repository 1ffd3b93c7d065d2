#include "metafunc/embeddings.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "metafunc/binary_io.hpp"
#include "metafunc/error.hpp"
#include "metafunc/rng.hpp"

namespace metafunc {

EmbeddingSet::EmbeddingSet(std::size_t dim, std::vector<std::uint32_t> labels, std::vector<double> values)
    : dim_(dim), labels_(std::move(labels)), values_(std::move(values)) {
  require(dim_ > 0, ErrorCode::DimensionError, "embedding dimension must be positive");
  require(values_.size() == labels_.size() * dim_, ErrorCode::DimensionError,
          "value count does not match rows x dim");
  for (const double v : values_) require(std::isfinite(v), ErrorCode::DataError, "non-finite embedding value");
  for (std::size_t i = 0; i < labels_.size(); ++i) class_index_[labels_[i]].push_back(i);
}

std::vector<std::uint32_t> EmbeddingSet::class_ids() const {
  std::vector<std::uint32_t> ids;
  ids.reserve(class_index_.size());
  for (const auto& [id, _] : class_index_) ids.push_back(id);
  return ids;
}

std::span<const std::size_t> EmbeddingSet::indices_of(std::uint32_t class_id) const {
  const auto it = class_index_.find(class_id);
  if (it == class_index_.end()) fail(ErrorCode::UnknownClass, "class " + std::to_string(class_id));
  return it->second;
}

std::size_t EmbeddingSet::smallest_class_size() const noexcept {
  std::size_t m = 0;
  bool first = true;
  for (const auto& [_, idx] : class_index_) {
    m = first ? idx.size() : std::min(m, idx.size());
    first = false;
  }
  return m;
}

namespace {

using Point2 = std::array<double, 2>;

Point2 shape_point(const DistributionSpec& spec, std::uint32_t cls, Rng& rng) {
  const double sep = spec.separation;
  const std::uint32_t n = spec.num_classes;
  switch (spec.kind) {
    case ShapeKind::blobs: {
      if (n == 1) return {0.0, 0.0};
      const double radius = sep / (2.0 * std::sin(std::numbers::pi / n));
      const double angle = 2.0 * std::numbers::pi * cls / n;
      return {radius * std::cos(angle), radius * std::sin(angle)};
    }
    case ShapeKind::moons: {
      const double t = std::numbers::pi * rng.uniform();
      if (cls == 0) return {sep * (std::cos(t) - 0.5), sep * (std::sin(t) - 0.25)};
      return {sep * (0.5 - std::cos(t)), sep * (0.25 - std::sin(t))};
    }
    case ShapeKind::circles: {
      const double t = 2.0 * std::numbers::pi * rng.uniform();
      const double radius = sep * (cls + 1.0);
      return {radius * std::cos(t), radius * std::sin(t)};
    }
    case ShapeKind::strips: {
      const double centre = (cls - 0.5 * (n - 1.0)) * sep;
      const double half_len = 0.5 * n * sep;
      return {centre + rng.uniform(-0.25, 0.25) * sep, rng.uniform(-half_len, half_len)};
    }
  }
  return {0.0, 0.0};
}

void validate(const DistributionSpec& spec) {
  require(spec.samples_per_class > 0, ErrorCode::EmptyClass, "samples_per_class must be positive");
  require(spec.num_classes > 0, ErrorCode::ConfigError, "num_classes must be positive");
  require(spec.dim >= 2, ErrorCode::ConfigError, "dim must be at least 2");
  require(std::isfinite(spec.noise_sigma) && spec.noise_sigma >= 0.0, ErrorCode::ConfigError,
          "noise_sigma must be finite and non-negative");
  require(std::isfinite(spec.separation) && spec.separation > 0.0, ErrorCode::ConfigError,
          "separation must be positive");
  if (spec.kind == ShapeKind::moons || spec.kind == ShapeKind::circles)
    require(spec.num_classes == 2, ErrorCode::UnsupportedShape, "moons/circles generate exactly 2 classes");
}

constexpr std::uint64_t kLiftStream = 0x4c494654;  // "LIFT"
constexpr std::uint64_t kClassStream = 0x434c5353;

}  // namespace

std::vector<double> orthonormal_lift_matrix(std::size_t dim, std::size_t target_dim, std::uint64_t seed) {
  require(target_dim >= dim, ErrorCode::DimensionShrink, "target_dim smaller than dim");
  Rng rng(seed, {kLiftStream, dim, target_dim});
  Eigen::MatrixXd g(target_dim, dim);
  for (std::size_t r = 0; r < target_dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(target_dim, dim);
  std::vector<double> out(target_dim * dim);
  for (std::size_t r = 0; r < target_dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) out[r * dim + c] = q(r, c);
  return out;
}

EmbeddingSet lift_dimension(const EmbeddingSet& set, std::size_t target_dim, std::uint64_t seed) {
  const std::size_t dim = set.dim();
  require(target_dim >= dim, ErrorCode::DimensionShrink,
          "cannot lift " + std::to_string(dim) + " -> " + std::to_string(target_dim));
  if (target_dim == dim) return set;
  const auto q = orthonormal_lift_matrix(dim, target_dim, seed);
  std::vector<double> values(set.size() * target_dim);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto x = set.row(i);
    for (std::size_t r = 0; r < target_dim; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += q[r * dim + c] * x[c];
      values[i * target_dim + r] = s;
    }
  }
  return EmbeddingSet(target_dim, {set.labels().begin(), set.labels().end()}, std::move(values));
}

EmbeddingSet generate_synthetic(const DistributionSpec& spec) {
  validate(spec);
  const std::size_t dim = spec.dim;
  const std::size_t total = std::size_t{spec.num_classes} * spec.samples_per_class;
  const std::vector<double> lift =
      dim > 2 ? orthonormal_lift_matrix(2, dim, spec.lift_seed.value_or(spec.seed)) : std::vector<double>{};

  std::vector<std::uint32_t> labels;
  std::vector<double> values;
  labels.reserve(total);
  values.reserve(total * dim);
  for (std::uint32_t cls = 0; cls < spec.num_classes; ++cls) {
    Rng rng(spec.seed, {kClassStream, cls});
    for (std::uint32_t s = 0; s < spec.samples_per_class; ++s) {
      auto p = shape_point(spec, cls, rng);
      p[0] += spec.offset[0];
      p[1] += spec.offset[1];
      labels.push_back(cls);
      for (std::size_t r = 0; r < dim; ++r) {
        const double base = dim > 2 ? lift[r * 2] * p[0] + lift[r * 2 + 1] * p[1] : p[r];
        const double v = base + spec.noise_sigma * rng.normal();
        values.push_back(static_cast<double>(static_cast<float>(v)));
      }
    }
  }
  return EmbeddingSet(dim, std::move(labels), std::move(values));
}

EmbeddingSet concat_relabel(std::span<const EmbeddingSet> sets) {
  require(!sets.empty(), ErrorCode::ConfigError, "nothing to concatenate");
  const std::size_t dim = sets.front().dim();
  std::vector<std::uint32_t> labels;
  std::vector<double> values;
  std::uint32_t next = 0;
  for (const auto& s : sets) {
    require(s.dim() == dim, ErrorCode::DimensionError, "concatenated sets differ in dimension");
    std::map<std::uint32_t, std::uint32_t> remap;
    for (const auto id : s.class_ids()) remap[id] = next++;
    for (std::size_t i = 0; i < s.size(); ++i) labels.push_back(remap[s.label(i)]);
    values.insert(values.end(), s.values().begin(), s.values().end());
  }
  return EmbeddingSet(dim, std::move(labels), std::move(values));
}

EmbeddingSet generate_mixture(std::span<const DistributionSpec> specs) {
  std::vector<EmbeddingSet> parts;
  parts.reserve(specs.size());
  for (const auto& s : specs) parts.push_back(generate_synthetic(s));
  return concat_relabel(parts);
}

EmbeddingSet select_classes(const EmbeddingSet& set, std::span<const std::uint32_t> ids) {
  const std::set<std::uint32_t> wanted(ids.begin(), ids.end());
  std::vector<std::uint32_t> labels;
  std::vector<double> values;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!wanted.contains(set.label(i))) continue;
    labels.push_back(set.label(i));
    const auto r = set.row(i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return EmbeddingSet(set.dim(), std::move(labels), std::move(values));
}

std::pair<EmbeddingSet, EmbeddingSet> split_classes(const EmbeddingSet& set,
                                                    std::span<const std::uint32_t> base_ids,
                                                    std::span<const std::uint32_t> novel_ids) {
  require(!base_ids.empty() && !novel_ids.empty(), ErrorCode::EmptySplit, "base and novel lists must be non-empty");
  for (const auto id : base_ids)
    require(set.has_class(id), ErrorCode::UnknownClass, "base class " + std::to_string(id));
  for (const auto id : novel_ids)
    require(set.has_class(id), ErrorCode::UnknownClass, "novel class " + std::to_string(id));
  const std::set<std::uint32_t> base(base_ids.begin(), base_ids.end());
  for (const auto id : novel_ids)
    require(!base.contains(id), ErrorCode::OverlappingSplit, "class " + std::to_string(id) + " in both lists");
  return {select_classes(set, base_ids), select_classes(set, novel_ids)};
}

namespace {
constexpr std::uint32_t kEmbfVersion = 1;
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set) {
  io::Writer w;
  w.magic("EMBF");
  w.u32(kEmbfVersion);
  w.u32(static_cast<std::uint32_t>(set.dim()));
  w.u32(static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    w.u32(set.label(i));
    w.f32_array(set.row(i));
  }
  return w.bytes();
}

EmbeddingSet decode_embeddings(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("EMBF");
  const auto version = r.u32();
  require(version == kEmbfVersion, ErrorCode::FormatError, "unsupported EMBF version " + std::to_string(version));
  const std::size_t dim = r.u32();
  const std::size_t n = r.u32();
  require(dim > 0, ErrorCode::FormatError, "zero dimension");
  if (n > r.remaining() / (4 + 4 * dim)) fail(ErrorCode::FormatError, "truncated payload: fewer rows than declared");
  std::vector<std::uint32_t> labels(n);
  std::vector<double> values;
  values.reserve(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = r.u32();
    const auto row = r.f32_array_as_double(dim);
    values.insert(values.end(), row.begin(), row.end());
  }
  r.expect_end();
  return EmbeddingSet(dim, std::move(labels), std::move(values));
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  io::write_bytes(path, encode_embeddings(set));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) { return decode_embeddings(io::read_bytes(path)); }

EmbeddingSet load_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open for reading: " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::FormatError, "empty CSV");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  require(header.size() >= 2 && header[0] == "class", ErrorCode::FormatError, "CSV header must start with 'class'");
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j)
    require(header[j + 1] == "f" + std::to_string(j), ErrorCode::FormatError, "unexpected CSV column " + header[j + 1]);

  std::vector<std::uint32_t> labels;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    require(cells.size() == dim + 1, ErrorCode::FormatError, "wrong field count on line " + std::to_string(line_no));
    try {
      const long long cls = std::stoll(cells[0]);
      require(cls >= 0 && cls <= UINT32_MAX, ErrorCode::FormatError, "class id out of range");
      labels.push_back(static_cast<std::uint32_t>(cls));
      for (std::size_t j = 0; j < dim; ++j) values.push_back(std::stod(cells[j + 1]));
    } catch (const std::logic_error&) {
      fail(ErrorCode::FormatError, "unparsable value on line " + std::to_string(line_no));
    }
  }
  return EmbeddingSet(dim, std::move(labels), std::move(values));
}

void save_embeddings_csv(const EmbeddingSet& set, const std::filesystem::path& path) {
  io::ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open for writing: " + path.string());
  out.precision(17);
  out << "class";
  for (std::size_t j = 0; j < set.dim(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.label(i);
    for (const double v : set.row(i)) out << ',' << v;
    out << '\n';
  }
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace metafunc
