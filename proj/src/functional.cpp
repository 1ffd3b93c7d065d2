#include "metafunc/functional.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metafunc/binary_io.hpp"
#include "metafunc/error.hpp"
#include "metafunc/rng.hpp"

namespace metafunc {

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kSplitStream = 0x53504c54;
constexpr std::uint64_t kShuffleStream = 0x5348464c;
constexpr std::uint64_t kDropStream = 0x44524f50;

struct Batch {
  Matrix f_phi;
  Matrix f_p;
  Matrix target;
};

Batch gather(const FunctionalSet& fset, std::span<const std::size_t> idx) {
  const std::size_t L = fset.classifier_len();
  const std::size_t P = fset.prototype_len();
  Batch b{Matrix(idx.size(), L), Matrix(idx.size(), P), Matrix(idx.size(), L)};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& t = fset.tuples[idx[i]];
    std::copy(t.f_phi.begin(), t.f_phi.end(), b.f_phi.row(i).begin());
    std::copy(t.f_tilde.begin(), t.f_tilde.end(), b.target.row(i).begin());
    std::copy(t.f_p.begin(), t.f_p.end(), b.f_p.row(i).begin());
  }
  return b;
}

double mean_sq(MatrixView a, MatrixView b) {
  double total = 0.0;
  for (std::size_t n = 0; n < a.rows * a.cols; ++n) {
    const double d = a.data[n] - b.data[n];
    total += d * d;
  }
  return a.rows == 0 ? 0.0 : total / static_cast<double>(a.rows);
}

void check_fset(const FunctionalSet& fset) {
  require(!fset.empty(), ErrorCode::EmptyFunctionalSet, "functional set is empty");
  const std::size_t L = fset.classifier_len();
  const std::size_t P = fset.prototype_len();
  for (const auto& t : fset.tuples)
    require(t.f_phi.size() == L && t.f_tilde.size() == L && t.f_p.size() == P, ErrorCode::DimensionError,
            "functional set is not homogeneous");
}

}  // namespace

std::string_view to_string(MflKind kind) noexcept {
  switch (kind) {
    case MflKind::vanilla: return "vanilla";
    case MflKind::with_prototypes: return "with_prototypes";
    case MflKind::composite: return "composite";
  }
  return "?";
}

MflKind parse_mfl_kind(std::string_view name) {
  if (name == "vanilla" || name == "mfl") return MflKind::vanilla;
  if (name == "with_prototypes" || name == "mfl-p") return MflKind::with_prototypes;
  if (name == "composite" || name == "commfl") return MflKind::composite;
  fail(ErrorCode::ConfigError, "unknown MFL variant '" + std::string(name) + "'");
}

MflModel::MflModel(const MflVariant& variant, const MflDims& dims, std::size_t hidden, std::uint64_t seed)
    : variant_(variant), dims_(dims) {
  require(variant.depth >= 1, ErrorCode::ConfigError, "depth must be at least 1");
  require(dims.classifier_len > 0, ErrorCode::DimensionError, "classifier length must be positive");
  require(!uses_prototypes() || dims.proto_len > 0, ErrorCode::DimensionError, "prototype length must be positive");
  const std::size_t L = dims.classifier_len;
  const std::size_t width = hidden == 0 ? ResidualRegressor::default_hidden(L) : hidden;
  for (std::uint32_t x = 0; x < variant.depth; ++x) {
    RegressorShape shape{L, width, L, 0, L};
    if (variant.kind == MflKind::with_prototypes) shape.in_dim = L + dims.proto_len;
    blocks_.emplace_back(shape, derive_key(seed, {kInitStream, x, 0}));
    if (variant.kind == MflKind::composite)
      proto_blocks_.emplace_back(RegressorShape{dims.proto_len, width, L, 0, 0}, derive_key(seed, {kInitStream, x, 1}));
  }
}

void MflModel::check_inputs(MatrixView f_phi, MatrixView f_p) const {
  require(f_phi.cols == dims_.classifier_len, ErrorCode::DimensionError,
          "classifier length " + std::to_string(f_phi.cols) + ", model expects " +
              std::to_string(dims_.classifier_len));
  if (!uses_prototypes()) return;
  require(f_p.cols > 0 && f_p.rows > 0, ErrorCode::MissingPrototypes, "variant requires prototypes");
  require(f_p.cols == dims_.proto_len && f_p.rows == f_phi.rows, ErrorCode::DimensionError,
          "prototype shape does not match the model");
}

Matrix MflModel::block_input(MatrixView current, MatrixView f_p) const {
  if (variant_.kind != MflKind::with_prototypes) {
    Matrix m(current.rows, current.cols);
    std::copy(current.data, current.data + current.rows * current.cols, m.data.begin());
    return m;
  }
  Matrix m(current.rows, current.cols + f_p.cols);
  for (std::size_t i = 0; i < current.rows; ++i) {
    auto dst = m.row(i);
    const auto c = current.row(i);
    const auto p = f_p.row(i);
    std::copy(c.begin(), c.end(), dst.begin());
    std::copy(p.begin(), p.end(), dst.begin() + static_cast<std::ptrdiff_t>(c.size()));
  }
  return m;
}

Matrix MflModel::apply_batch(MatrixView f_phi, MatrixView f_p, std::size_t upto) const {
  check_inputs(f_phi, f_p);
  const std::size_t n = upto == 0 ? blocks_.size() : std::min(upto, blocks_.size());
  Matrix current(f_phi.rows, f_phi.cols);
  std::copy(f_phi.data, f_phi.data + f_phi.rows * f_phi.cols, current.data.begin());
  for (std::size_t x = 0; x < n; ++x) {
    Matrix out = blocks_[x].forward_eval(block_input(current, f_p));
    if (variant_.kind == MflKind::composite) {
      const Matrix extra = proto_blocks_[x].forward_eval(f_p);
      for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += extra.data[k];
    }
    current = std::move(out);
  }
  return current;
}

std::vector<double> MflModel::apply(std::span<const double> f_phi, std::span<const double> f_p) const {
  const MatrixView phi{f_phi.data(), 1, f_phi.size()};
  const MatrixView p{f_p.data(), f_p.empty() ? 0u : 1u, f_p.size()};
  return apply_batch(phi, p).data;
}

MflModel MflModel::truncated(std::size_t depth) const {
  require(depth >= 1 && depth <= blocks_.size(), ErrorCode::ConfigError, "truncation depth out of range");
  MflModel m = *this;
  m.variant_.depth = static_cast<std::uint32_t>(depth);
  m.blocks_.resize(depth);
  if (!m.proto_blocks_.empty()) m.proto_blocks_.resize(depth);
  return m;
}

void MflModel::encode(io::Writer& w) const {
  w.magic("MFLM");
  w.u32(static_cast<std::uint32_t>(variant_.kind));
  w.u32(variant_.depth);
  w.u32(static_cast<std::uint32_t>(dims_.dim));
  w.u32(static_cast<std::uint32_t>(dims_.classifier_len));
  w.u32(static_cast<std::uint32_t>(dims_.proto_len));
  for (const auto& b : blocks_) b.encode(w);
  for (const auto& b : proto_blocks_) b.encode(w);
}

MflModel MflModel::decode(io::Reader& r) {
  r.expect_magic("MFLM");
  MflModel m;
  const std::uint32_t kind = r.u32();
  require(kind <= 2, ErrorCode::FormatError, "unknown variant tag " + std::to_string(kind));
  m.variant_.kind = static_cast<MflKind>(kind);
  m.variant_.depth = r.u32();
  m.dims_.dim = r.u32();
  m.dims_.classifier_len = r.u32();
  m.dims_.proto_len = r.u32();
  require(m.variant_.depth >= 1, ErrorCode::FormatError, "model depth is zero");
  // Each block payload is at least its 40-byte header.
  require(std::uint64_t{m.variant_.depth} * 40 <= r.remaining(), ErrorCode::FormatError, "truncated payload");
  const std::size_t L = m.dims_.classifier_len;
  for (std::uint32_t x = 0; x < m.variant_.depth; ++x) {
    auto b = ResidualRegressor::decode(r);
    const auto& s = b.shape();
    const std::size_t in = m.variant_.kind == MflKind::with_prototypes ? L + m.dims_.proto_len : L;
    require(s.in_dim == in && s.out_dim == L && s.skip_offset == 0 && s.skip_len == L, ErrorCode::FormatError,
            "block shape does not match model dims");
    m.blocks_.push_back(std::move(b));
  }
  if (m.variant_.kind == MflKind::composite) {
    for (std::uint32_t x = 0; x < m.variant_.depth; ++x) {
      auto b = ResidualRegressor::decode(r);
      const auto& s = b.shape();
      require(s.in_dim == m.dims_.proto_len && s.out_dim == L && s.skip_len == 0, ErrorCode::FormatError,
              "prototype block shape does not match model dims");
      m.proto_blocks_.push_back(std::move(b));
    }
  }
  return m;
}

std::vector<std::uint8_t> encode_model(const MflModel& model) {
  io::Writer w;
  model.encode(w);
  return w.bytes();
}

MflModel decode_model(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  MflModel m = MflModel::decode(r);
  r.expect_end();
  return m;
}

void save_model(const MflModel& model, const std::filesystem::path& path) { io::write_bytes(path, encode_model(model)); }

MflModel load_model(const std::filesystem::path& path) { return decode_model(io::read_bytes(path)); }

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_validation(std::size_t n,
                                                                                     double val_fraction,
                                                                                     std::uint64_t seed) {
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorCode::ConfigError, "validation fraction must be in [0,1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, {kSplitStream});
  rng.shuffle(std::span<std::size_t>(order));
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n_val == 0 && n >= 3) n_val = 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

double functional_mse(const MflModel& model, const FunctionalSet& fset, std::span<const std::size_t> indices,
                      std::size_t upto) {
  if (indices.empty()) return 0.0;
  const Batch b = gather(fset, indices);
  const Matrix out = model.apply_batch(b.f_phi, b.f_p, upto);
  return mean_sq(out, b.target);
}

double identity_mse(const FunctionalSet& fset, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  const Batch b = gather(fset, indices);
  return mean_sq(b.f_phi, b.target);
}

TrainResult train_mfl(const FunctionalSet& fset, const MflVariant& variant, const MflTrainConfig& cfg,
                      const MflModel* init, const EpochCallback& on_epoch) {
  check_fset(fset);
  require(cfg.epochs >= 1, ErrorCode::ConfigError, "epochs must be at least 1");
  require(cfg.batch_size >= 2, ErrorCode::ConfigError, "batch size must be at least 2");
  require(cfg.lr > 0.0 && cfg.lr_after > 0.0, ErrorCode::ConfigError, "learning rates must be positive");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorCode::ConfigError, "momentum must be in [0,1)");

  const MflDims dims = MflDims::of(fset);
  MflModel model = init ? *init : MflModel(variant, dims, cfg.hidden, cfg.seed);
  require(model.dims().classifier_len == dims.classifier_len &&
              (!model.uses_prototypes() || model.dims().proto_len == dims.proto_len),
          ErrorCode::DimensionError, "model dims do not match the functional set");
  require(model.variant() == variant, ErrorCode::ConfigError, "initial model has a different variant");

  auto [train_idx, val_idx] = split_train_validation(fset.size(), cfg.val_fraction, cfg.seed);
  require(train_idx.size() >= 2, ErrorCode::BatchTooSmall, "training split has fewer than 2 tuples");

  TrainResult result;
  auto& hist = result.history;
  hist.train_size = train_idx.size();
  hist.val_size = val_idx.size();
  hist.identity_train_mse = identity_mse(fset, train_idx);
  hist.identity_val_mse = val_idx.empty() ? hist.identity_train_mse : identity_mse(fset, val_idx);

  auto evaluate = [&](std::uint32_t epoch, double lr) {
    EpochStats s;
    s.epoch = epoch;
    s.lr = lr;
    s.train_mse = functional_mse(model, fset, train_idx);
    s.val_mse = val_idx.empty() ? s.train_mse : functional_mse(model, fset, val_idx);
    require(std::isfinite(s.train_mse) && std::isfinite(s.val_mse), ErrorCode::NumericalError,
            "non-finite loss at epoch " + std::to_string(epoch));
    hist.epochs.push_back(s);
    if (on_epoch) on_epoch(s);
    return s;
  };

  MflModel best = model;
  double best_val = evaluate(0, 0.0).val_mse;

  const std::size_t depth = model.depth();
  const bool composite = variant.kind == MflKind::composite;
  std::vector<TrainState> states;
  std::vector<TrainState> proto_states;
  for (std::size_t x = 0; x < depth; ++x) {
    states.push_back(TrainState::for_network(model.block(x)));
    if (composite) proto_states.push_back(TrainState::for_network(model.proto_block(x)));
  }

  std::uint64_t step = 0;
  ResidualRegressor::Cache cache;
  ResidualRegressor::Cache proto_cache;
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = epoch <= cfg.lr_decay_epoch ? cfg.lr : cfg.lr_after;
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng(cfg.seed, {kShuffleStream, epoch});
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      if (len < 2) break;  // batch statistics need two rows
      const Batch b = gather(fset, std::span<const std::size_t>(order).subspan(start, len));
      Matrix current = b.f_phi;
      for (std::size_t x = 0; x < depth; ++x) {
        auto& block = model.block(x);
        Rng drop_rng(cfg.seed, {kDropStream, x, 0, step});
        Matrix out = block.forward_train(model.block_input(current, b.f_p), drop_rng, cache);
        Matrix proto_out;
        if (composite) {
          Rng proto_rng(cfg.seed, {kDropStream, x, 1, step});
          proto_out = model.proto_block(x).forward_train(b.f_p, proto_rng, proto_cache);
          for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += proto_out.data[k];
        }
        const LossResult loss = mse_loss(out, b.target);
        require(std::isfinite(loss.loss), ErrorCode::NumericalError,
                "non-finite training loss at epoch " + std::to_string(epoch));
        const RegressorGradients g = block.backward(cache, loss.grad);
        if (composite) {
          const RegressorGradients pg = model.proto_block(x).backward(proto_cache, loss.grad);
          sgd_step(model.proto_block(x), pg, proto_states[x], lr, cfg.momentum);
        }
        sgd_step(block, g, states[x], lr, cfg.momentum);
        // The next block starts from this block's output; no gradient flows back.
        current = std::move(out);
      }
      ++step;
    }

    const EpochStats s = evaluate(epoch, lr);
    if (!cfg.select_best || s.val_mse < best_val) {
      best_val = s.val_mse;
      best = model;
      hist.best_epoch = epoch;
    }
  }

  result.model = std::move(best);
  for (std::size_t x = 1; x <= depth; ++x) hist.block_train_mse.push_back(functional_mse(result.model, fset, train_idx, x));
  return result;
}

TrainResult train_mfl_multiclass(const EmbeddingSet& base, const SamplerConfig& sampler_cfg,
                                 std::uint64_t sampler_seed, const MflVariant& variant, const MflTrainConfig& cfg,
                                 unsigned workers, const EpochCallback& on_epoch) {
  require(sampler_cfg.n_way >= 2, ErrorCode::InvalidWay, "multi-class training needs n_way >= 2");
  require(sampler_cfg.outer_loops >= 1, ErrorCode::ConfigError, "outer loop count must be at least 1");
  TrainResult result;
  for (std::uint32_t i = 0; i < sampler_cfg.outer_loops; ++i) {
    const FunctionalSet fset = sample_multiclass_functional_set(base, sampler_cfg, sampler_seed, i, workers);
    MflTrainConfig round = cfg;
    if (i > 0) round.seed = derive_key(cfg.seed, {i});
    TrainResult r = train_mfl(fset, variant, round, i == 0 ? nullptr : &result.model, on_epoch);
    result = std::move(r);
  }
  return result;
}

std::vector<double> ensemble_transform(const MflModel& model, std::span<const std::vector<double>> classifiers,
                                       std::span<const double> f_p) {
  require(!classifiers.empty(), ErrorCode::EmptyEnsemble, "ensemble needs at least one classifier");
  const std::size_t L = classifiers.front().size();
  std::vector<double> sum(L, 0.0);
  for (const auto& c : classifiers) {
    require(c.size() == L, ErrorCode::DimensionError, "ensemble classifiers differ in length");
    const auto out = model.apply(c, f_p);
    for (std::size_t j = 0; j < L; ++j) sum[j] += out[j];
  }
  const double inv = 1.0 / static_cast<double>(classifiers.size());
  for (double& v : sum) v *= inv;
  return sum;
}

}  // namespace metafunc
