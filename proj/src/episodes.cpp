#include "metafunc/episodes.hpp"

#include <algorithm>
#include <string>

#include "metafunc/binary_io.hpp"
#include "metafunc/error.hpp"
#include "metafunc/parallel.hpp"
#include "metafunc/rng.hpp"

namespace metafunc {

namespace {

constexpr std::uint64_t kManyStream = 0x4d414e59;   // binary many-shot negatives
constexpr std::uint64_t kFewStream = 0x46455753;    // binary few-shot sub-episodes
constexpr std::uint64_t kWayStream = 0x57415953;    // multi-class class draw
constexpr std::uint64_t kMcFewStream = 0x4d434657;  // multi-class few-shot draw
constexpr std::uint32_t kFsetVersion = 1;

Matrix gather(const EmbeddingSet& set, std::span<const std::size_t> idx) {
  Matrix m(idx.size(), set.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = set.row(idx[i]);
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

std::vector<float> to_f32(std::span<const double> v) {
  std::vector<float> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
  return out;
}

LinearClassifier fit_binary(const Matrix& X, std::span<const int> y, BaseClassifier kind, double C, FitConfig fit) {
  fit.C = C;
  if (kind == BaseClassifier::svm) return train_linear_svm(X, y, fit).model;
  return train_logistic(X, y, fit).model;
}

void validate(const SamplerConfig& cfg) {
  require(cfg.many_shot_repeats >= 1 && cfg.few_shot_repeats >= 1 && cfg.shot >= 1 && cfg.outer_loops >= 1 &&
              cfg.many_shot_negative_factor >= 1 && cfg.n_way >= 1,
          ErrorCode::ConfigError, "sampler counts must be at least 1");
  require(!cfg.hyper_set.empty(), ErrorCode::ConfigError, "hyper-parameter set is empty");
  for (const double c : cfg.hyper_set) require(c > 0.0, ErrorCode::ConfigError, "C values must be positive");
  require(cfg.many_shot_C > 0.0, ErrorCode::ConfigError, "many-shot C must be positive");
  if (cfg.n_way == 1) {
    require(!cfg.negative_multipliers.empty(), ErrorCode::ConfigError, "negative multiplier set is empty");
    for (const auto k : cfg.negative_multipliers)
      require(k >= 1, ErrorCode::ConfigError, "negative multipliers must be positive");
    require(cfg.classifier != BaseClassifier::softmax, ErrorCode::ConfigError,
            "binary sampling uses logistic or svm classifiers");
  }
}

}  // namespace

std::uint64_t tuples_per_pass(const SamplerConfig& cfg, std::size_t num_base_classes) {
  const std::uint64_t per_episode = std::uint64_t{cfg.many_shot_repeats} * cfg.few_shot_repeats * cfg.hyper_set.size();
  if (cfg.n_way >= 2) return per_episode;
  return per_episode * num_base_classes * cfg.negative_multipliers.size();
}

std::uint64_t total_tuples(const SamplerConfig& cfg, std::size_t num_base_classes) {
  return tuples_per_pass(cfg, num_base_classes) * cfg.outer_loops;
}

ManyShotEpisode draw_many_shot_episode(const EmbeddingSet& base, const SamplerConfig& cfg, std::uint64_t seed,
                                       std::uint32_t positive_class, std::uint32_t repeat) {
  ManyShotEpisode ep;
  const auto pos = base.indices_of(positive_class);
  ep.positives.assign(pos.begin(), pos.end());
  std::vector<std::size_t> pool;
  pool.reserve(base.size() - pos.size());
  // Ordered by (class id, rank within class) so the draw does not depend on
  // how records of different classes are interleaved.
  for (const auto id : base.class_ids()) {
    if (id == positive_class) continue;
    const auto members = base.indices_of(id);
    pool.insert(pool.end(), members.begin(), members.end());
  }
  const std::size_t want = std::size_t{cfg.many_shot_negative_factor} * pos.size();
  require(pool.size() >= want, ErrorCode::InsufficientSamples,
          "class " + std::to_string(positive_class) + " needs " + std::to_string(want) + " negatives, pool has " +
              std::to_string(pool.size()));
  Rng rng(seed, {kManyStream, positive_class, repeat});
  for (const auto j : rng.sample_without_replacement(pool.size(), want)) ep.negatives.push_back(pool[j]);
  return ep;
}

FunctionalSet sample_binary_functional_set(const EmbeddingSet& base, const SamplerConfig& cfg, std::uint64_t seed,
                                           unsigned workers) {
  validate(cfg);
  require(cfg.n_way == 1, ErrorCode::ConfigError, "binary sampling needs n_way = 1");
  require(!base.empty() && base.num_classes() >= 2, ErrorCode::EmptyBase, "base set needs at least two classes");
  const auto classes = base.class_ids();
  const std::uint32_t max_k = *std::max_element(cfg.negative_multipliers.begin(), cfg.negative_multipliers.end());
  for (const auto c : classes) {
    const std::size_t nb = base.indices_of(c).size();
    require(nb >= cfg.shot, ErrorCode::InsufficientSamples,
            "class " + std::to_string(c) + " has " + std::to_string(nb) + " records, shot is " +
                std::to_string(cfg.shot));
    require(std::size_t{max_k} * cfg.shot <= std::size_t{cfg.many_shot_negative_factor} * nb,
            ErrorCode::InsufficientSamples, "k * s exceeds the many-shot negative pool of class " + std::to_string(c));
    require(base.size() - nb >= std::size_t{cfg.many_shot_negative_factor} * nb, ErrorCode::InsufficientSamples,
            "not enough negatives for class " + std::to_string(c));
  }

  const std::size_t units = classes.size() * cfg.many_shot_repeats;
  std::vector<std::vector<FunctionalTuple>> per_unit(units);
  parallel_for(units, workers, [&](std::size_t u) {
    const std::uint32_t b = classes[u / cfg.many_shot_repeats];
    const auto l = static_cast<std::uint32_t>(u % cfg.many_shot_repeats);
    const auto ep = draw_many_shot_episode(base, cfg, seed, b, l);

    std::vector<std::size_t> many_idx(ep.positives);
    many_idx.insert(many_idx.end(), ep.negatives.begin(), ep.negatives.end());
    std::vector<int> many_y(ep.positives.size(), 1);
    many_y.resize(many_idx.size(), -1);
    const auto many = fit_binary(gather(base, many_idx), many_y, cfg.classifier, cfg.many_shot_C, cfg.fit);
    const auto f_tilde = to_f32(many.flatten());

    auto& out = per_unit[u];
    out.reserve(std::size_t{cfg.few_shot_repeats} * cfg.negative_multipliers.size() * cfg.hyper_set.size());
    for (std::uint32_t f = 0; f < cfg.few_shot_repeats; ++f) {
      for (const std::uint32_t k : cfg.negative_multipliers) {
        Rng rng(seed, {kFewStream, b, l, f, k});
        std::vector<std::size_t> support;
        for (const auto j : rng.sample_without_replacement(ep.positives.size(), cfg.shot))
          support.push_back(ep.positives[j]);
        for (const auto j : rng.sample_without_replacement(ep.negatives.size(), std::size_t{k} * cfg.shot))
          support.push_back(ep.negatives[j]);

        const Matrix X = gather(base, support);
        std::vector<int> y(cfg.shot, 1);
        y.resize(support.size(), -1);
        const MatrixView pos{X.data.data(), cfg.shot, X.cols};
        const MatrixView neg{X.data.data() + cfg.shot * X.cols, X.rows - cfg.shot, X.cols};
        const auto f_p = to_f32(compute_prototypes(pos, neg).flatten());

        TupleMeta meta;
        meta.classes = {b};
        meta.shot = cfg.shot;
        meta.k = k;
        meta.many_repeat = l;
        meta.few_repeat = f;
        meta.support.assign(support.begin(), support.end());
        for (const double C : cfg.hyper_set) {
          const auto few = fit_binary(X, y, cfg.classifier, C, cfg.fit);
          meta.C = C;
          out.push_back({to_f32(few.flatten()), f_tilde, f_p, meta});
        }
      }
    }
  });

  FunctionalSet set{static_cast<std::uint32_t>(base.dim()), 1, {}};
  set.tuples.reserve(tuples_per_pass(cfg, classes.size()));
  for (auto& chunk : per_unit) std::move(chunk.begin(), chunk.end(), std::back_inserter(set.tuples));
  return set;
}

FunctionalSet sample_multiclass_functional_set(const EmbeddingSet& base, const SamplerConfig& cfg,
                                               std::uint64_t seed, std::uint32_t outer, unsigned workers) {
  validate(cfg);
  require(cfg.n_way >= 2, ErrorCode::InvalidWay, "multi-class sampling needs n_way >= 2");
  require(!base.empty(), ErrorCode::EmptyBase, "base set is empty");
  const auto classes = base.class_ids();
  require(classes.size() >= cfg.n_way, ErrorCode::InsufficientClasses,
          "n_way " + std::to_string(cfg.n_way) + " exceeds " + std::to_string(classes.size()) + " base classes");
  require(base.smallest_class_size() >= cfg.shot, ErrorCode::InsufficientSamples, "a base class is smaller than shot");

  const std::size_t n = cfg.n_way;
  const std::size_t d = base.dim();
  std::vector<std::vector<FunctionalTuple>> per_unit(cfg.many_shot_repeats);
  parallel_for(cfg.many_shot_repeats, workers, [&](std::size_t u) {
    const auto l = static_cast<std::uint32_t>(u);
    Rng way_rng(seed, {kWayStream, outer, l});
    std::vector<std::uint32_t> chosen;
    for (const auto j : way_rng.sample_without_replacement(classes.size(), n)) chosen.push_back(classes[j]);

    std::vector<std::size_t> many_idx;
    std::vector<int> many_y;
    for (std::size_t c = 0; c < n; ++c)
      for (const auto i : base.indices_of(chosen[c])) {
        many_idx.push_back(i);
        many_y.push_back(static_cast<int>(c));
      }
    FitConfig fit = cfg.fit;
    fit.C = cfg.many_shot_C;
    const auto many = train_softmax(gather(base, many_idx), many_y, fit, n).model;
    const auto f_tilde = to_f32(many.flat());

    auto& out = per_unit[u];
    for (std::uint32_t f = 0; f < cfg.few_shot_repeats; ++f) {
      Rng rng(seed, {kMcFewStream, outer, l, f});
      std::vector<std::size_t> support;
      std::vector<int> y;
      for (std::size_t c = 0; c < n; ++c) {
        const auto pool = base.indices_of(chosen[c]);
        for (const auto j : rng.sample_without_replacement(pool.size(), cfg.shot)) {
          support.push_back(pool[j]);
          y.push_back(static_cast<int>(c));
        }
      }
      const Matrix X = gather(base, support);
      std::vector<double> protos;
      protos.reserve(n * d);
      for (std::size_t c = 0; c < n; ++c) {
        const auto m = row_mean({X.data.data() + c * cfg.shot * d, cfg.shot, d});
        protos.insert(protos.end(), m.begin(), m.end());
      }
      const auto f_p = to_f32(protos);

      TupleMeta meta;
      meta.classes = chosen;
      meta.shot = cfg.shot;
      meta.k = cfg.n_way - 1;
      meta.outer = outer;
      meta.many_repeat = l;
      meta.few_repeat = f;
      meta.support.assign(support.begin(), support.end());
      for (const double C : cfg.hyper_set) {
        FitConfig few_fit = cfg.fit;
        few_fit.C = C;
        const auto few = train_softmax(X, y, few_fit, n).model;
        meta.C = C;
        out.push_back({to_f32(few.flat()), f_tilde, f_p, meta});
      }
    }
  });

  FunctionalSet set{static_cast<std::uint32_t>(d), cfg.n_way, {}};
  set.tuples.reserve(tuples_per_pass(cfg, classes.size()));
  for (auto& chunk : per_unit) std::move(chunk.begin(), chunk.end(), std::back_inserter(set.tuples));
  return set;
}

FunctionalSet sample_functional_set(const EmbeddingSet& base, const SamplerConfig& cfg, std::uint64_t seed,
                                    std::uint32_t outer, unsigned workers) {
  if (cfg.n_way >= 2) return sample_multiclass_functional_set(base, cfg, seed, outer, workers);
  return sample_binary_functional_set(base, cfg, seed, workers);
}

std::vector<std::uint8_t> encode_functional_set(const FunctionalSet& set) {
  io::Writer w;
  w.magic("FSET");
  w.u32(kFsetVersion);
  w.u32(set.dim);
  w.u32(set.n_way);
  w.u64(set.tuples.size());
  for (const auto& t : set.tuples) {
    require(t.f_phi.size() == t.f_tilde.size(), ErrorCode::DimensionError, "tuple classifier lengths differ");
    w.u32(static_cast<std::uint32_t>(t.f_phi.size()));
    w.u32(static_cast<std::uint32_t>(t.f_p.size()));
    w.f32_array(std::span<const float>(t.f_phi));
    w.f32_array(std::span<const float>(t.f_tilde));
    w.f32_array(std::span<const float>(t.f_p));
    const auto& m = t.meta;
    w.u32(static_cast<std::uint32_t>(m.classes.size()));
    for (const auto c : m.classes) w.u32(c);
    w.u32(m.shot);
    w.u32(m.k);
    w.f64(m.C);
    w.u32(m.outer);
    w.u32(m.many_repeat);
    w.u32(m.few_repeat);
    w.u32(static_cast<std::uint32_t>(m.support.size()));
    for (const auto s : m.support) w.u32(s);
  }
  return w.bytes();
}

FunctionalSet decode_functional_set(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("FSET");
  const auto version = r.u32();
  require(version == kFsetVersion, ErrorCode::FormatError, "unsupported FSET version " + std::to_string(version));
  FunctionalSet set;
  set.dim = r.u32();
  set.n_way = r.u32();
  require(set.dim > 0 && set.n_way > 0, ErrorCode::FormatError, "invalid FSET header");
  const auto count = r.u64();
  // Smallest possible tuple: two lengths, three empty payloads, meta with no lists.
  require(count <= r.remaining() / 40, ErrorCode::FormatError, "tuple count exceeds payload");
  set.tuples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FunctionalTuple t;
    const std::size_t len = r.u32();
    const std::size_t plen = r.u32();
    require(len == set.classifier_len(), ErrorCode::FormatError,
            "classifier length " + std::to_string(len) + " does not match header dim");
    require(plen == set.prototype_len(), ErrorCode::FormatError, "prototype length does not match header dim");
    t.f_phi = r.f32_array(len);
    t.f_tilde = r.f32_array(len);
    t.f_p = r.f32_array(plen);
    auto& m = t.meta;
    const std::size_t nc = r.u32();
    require(nc <= r.remaining() / 4, ErrorCode::FormatError, "truncated meta block");
    m.classes.resize(nc);
    for (auto& c : m.classes) c = r.u32();
    m.shot = r.u32();
    m.k = r.u32();
    m.C = r.f64();
    m.outer = r.u32();
    m.many_repeat = r.u32();
    m.few_repeat = r.u32();
    const std::size_t ns = r.u32();
    require(ns <= r.remaining() / 4, ErrorCode::FormatError, "truncated meta block");
    m.support.resize(ns);
    for (auto& s : m.support) s = r.u32();
    set.tuples.push_back(std::move(t));
  }
  r.expect_end();
  return set;
}

void save_functional_set(const FunctionalSet& set, const std::filesystem::path& path) {
  io::write_bytes(path, encode_functional_set(set));
}

FunctionalSet load_functional_set(const std::filesystem::path& path) {
  return decode_functional_set(io::read_bytes(path));
}

}  // namespace metafunc
