#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "metafunc/embeddings.hpp"
#include "metafunc/episodes.hpp"
#include "metafunc/neural.hpp"

namespace metafunc {

enum class MflKind : std::uint32_t { vanilla = 0, with_prototypes = 1, composite = 2 };

std::string_view to_string(MflKind kind) noexcept;
/// "vanilla", "with_prototypes" (alias "mfl-p"), "composite" (alias "commfl"). ConfigError otherwise.
MflKind parse_mfl_kind(std::string_view name);

struct MflVariant {
  MflKind kind = MflKind::vanilla;
  std::uint32_t depth = 1;  ///< number of iterative-update blocks

  friend bool operator==(const MflVariant&, const MflVariant&) = default;
};

struct MflDims {
  std::size_t dim = 0;
  std::size_t classifier_len = 0;
  std::size_t proto_len = 0;

  static MflDims of(const FunctionalSet& set) { return {set.dim, set.classifier_len(), set.prototype_len()}; }
  friend bool operator==(const MflDims&, const MflDims&) = default;
};

/// The learned functional: a chain of residual blocks over the flattened
/// classifier, optionally fed prototypes (concatenated, or via a parallel
/// prototype branch for the composite kind).
class MflModel {
 public:
  MflModel() = default;
  /// hidden = 0 uses ResidualRegressor::default_hidden(classifier_len).
  MflModel(const MflVariant& variant, const MflDims& dims, std::size_t hidden, std::uint64_t seed);

  const MflVariant& variant() const noexcept { return variant_; }
  const MflDims& dims() const noexcept { return dims_; }
  std::size_t depth() const noexcept { return blocks_.size(); }
  bool uses_prototypes() const noexcept { return variant_.kind != MflKind::vanilla; }

  ResidualRegressor& block(std::size_t x) { return blocks_.at(x); }
  const ResidualRegressor& block(std::size_t x) const { return blocks_.at(x); }
  /// Composite kind only.
  ResidualRegressor& proto_block(std::size_t x) { return proto_blocks_.at(x); }
  const ResidualRegressor& proto_block(std::size_t x) const { return proto_blocks_.at(x); }

  /// Input matrix of block x given the running classifier and the prototypes.
  Matrix block_input(MatrixView current, MatrixView f_p) const;

  /// Eval-mode transform of a single classifier. Throws MissingPrototypes if
  /// the variant needs prototypes and f_p is empty, DimensionError on width mismatch.
  std::vector<double> apply(std::span<const double> f_phi, std::span<const double> f_p = {}) const;
  /// Row-wise apply; `upto` limits the number of blocks (0 = all).
  Matrix apply_batch(MatrixView f_phi, MatrixView f_p, std::size_t upto = 0) const;

  /// The first `depth` blocks as a standalone model.
  MflModel truncated(std::size_t depth) const;

  friend bool operator==(const MflModel&, const MflModel&) = default;

  void encode(io::Writer& w) const;
  static MflModel decode(io::Reader& r);

 private:
  void check_inputs(MatrixView f_phi, MatrixView f_p) const;

  MflVariant variant_{};
  MflDims dims_{};
  std::vector<ResidualRegressor> blocks_;
  std::vector<ResidualRegressor> proto_blocks_;
};

struct MflTrainConfig {
  std::uint32_t epochs = 30;
  std::uint32_t batch_size = 256;
  double lr = 0.01;
  std::uint32_t lr_decay_epoch = 20;  ///< epochs after this one use lr_after
  double lr_after = 0.001;
  double momentum = 0.9;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t hidden = 0;  ///< 0 = default width
  bool select_best = true;
};

struct EpochStats {
  std::uint32_t epoch = 0;  ///< 0 = before any update
  double lr = 0.0;
  double train_mse = 0.0;   ///< eval-mode, whole training split
  double val_mse = 0.0;     ///< eval-mode; equals train_mse if the split is empty
};

struct TrainHistory {
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  double identity_train_mse = 0.0;
  double identity_val_mse = 0.0;
  std::vector<EpochStats> epochs;
  std::uint32_t best_epoch = 0;
  /// Eval-mode training MSE after each block of the returned model.
  std::vector<double> block_train_mse;
};

struct TrainResult {
  MflModel model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains block by block on each mini-batch: block x sees block x-1's
/// (detached) output and only its own parameters are updated. Returns the
/// epoch with the lowest validation MSE, epoch 0 included. If `init` is given
/// training continues from it. Throws EmptyFunctionalSet, DimensionError,
/// BatchTooSmall, ConfigError, NumericalError.
TrainResult train_mfl(const FunctionalSet& fset, const MflVariant& variant, const MflTrainConfig& cfg,
                      const MflModel* init = nullptr, const EpochCallback& on_epoch = {});

/// Runs sampler_cfg.outer_loops rounds of (resample, continue training).
/// Round 0 trains with cfg.seed; round i > 0 with derive_key(cfg.seed, {i}).
TrainResult train_mfl_multiclass(const EmbeddingSet& base, const SamplerConfig& sampler_cfg,
                                 std::uint64_t sampler_seed, const MflVariant& variant, const MflTrainConfig& cfg,
                                 unsigned workers = 1, const EpochCallback& on_epoch = {});

/// Mean of apply over one classifier per hyper-parameter value. Throws EmptyEnsemble.
std::vector<double> ensemble_transform(const MflModel& model, std::span<const std::vector<double>> classifiers,
                                       std::span<const double> f_p = {});

/// Mean squared distance between the model output and f_tilde over the given tuples.
double functional_mse(const MflModel& model, const FunctionalSet& fset, std::span<const std::size_t> indices,
                      std::size_t upto = 0);
/// Same for the identity map (f_phi itself).
double identity_mse(const FunctionalSet& fset, std::span<const std::size_t> indices);

/// Deterministic (train, validation) partition of tuple indices used by train_mfl.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_validation(std::size_t n,
                                                                                     double val_fraction,
                                                                                     std::uint64_t seed);

// "MFLM" files: magic, u32 kind, u32 depth, u32 d, u32 classifier length,
// u32 prototype length, then depth "MFLN" block payloads followed by depth
// prototype-branch payloads for the composite kind.
std::vector<std::uint8_t> encode_model(const MflModel& model);
MflModel decode_model(std::vector<std::uint8_t> bytes);
void save_model(const MflModel& model, const std::filesystem::path& path);
MflModel load_model(const std::filesystem::path& path);

}  // namespace metafunc
