#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metafunc/binary_io.hpp"
#include "metafunc/matrix.hpp"
#include "metafunc/rng.hpp"

namespace metafunc {

enum class Mode { train, eval };

struct RegressorShape {
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
  std::size_t out_dim = 0;
  /// The input columns [skip_offset, skip_offset + skip_len) are added to the
  /// output. skip_len is either out_dim or 0 (no skip connection).
  std::size_t skip_offset = 0;
  std::size_t skip_len = 0;

  friend bool operator==(const RegressorShape&, const RegressorShape&) = default;
};

struct RegressorHyper {
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double keep_prob = 0.9;
  double leaky_slope = 0.01;

  friend bool operator==(const RegressorHyper&, const RegressorHyper&) = default;
};

/// Parameter gradients of a ResidualRegressor plus the input gradient.
struct RegressorGradients {
  Matrix fc1_weight;
  std::vector<double> fc1_bias;
  std::vector<double> bn_gamma;
  std::vector<double> bn_beta;
  Matrix fc2_weight;
  std::vector<double> fc2_bias;
  Matrix input;

  /// Same order as ResidualRegressor::parameter_blocks().
  std::vector<std::span<const double>> blocks() const;
};

/// out = fc2(dropout(leaky_relu(batchnorm(fc1(x))))) + x[skip slice].
/// fc2 starts at zero, so a fresh block is exactly the skip projection.
class ResidualRegressor {
 public:
  struct Cache {
    Matrix input;
    Matrix normalized;   // BN xhat
    Matrix activated;    // after BN affine, before LeakyReLU
    Matrix dropped;      // after dropout
    Matrix mask;         // 0 or 1/keep
    std::vector<double> inv_std;
    std::uint64_t version = UINT64_MAX;
  };

  ResidualRegressor() = default;
  ResidualRegressor(const RegressorShape& shape, std::uint64_t init_seed, const RegressorHyper& hyper = {});

  /// round(0.375 * out_dim), at least 1.
  static std::size_t default_hidden(std::size_t out_dim) noexcept;

  const RegressorShape& shape() const noexcept { return shape_; }
  const RegressorHyper& hyper() const noexcept { return hyper_; }

  /// Frozen running statistics, no dropout. Pure.
  Matrix forward_eval(MatrixView x) const;
  /// Batch statistics with a dropout mask drawn from rng; updates running stats.
  Matrix forward_train(MatrixView x, Rng& rng, Cache& cache);
  /// As above with an explicit mask (B x hidden, entries 0 or 1/keep_prob).
  Matrix forward_train(MatrixView x, const Matrix& mask, Cache& cache);

  /// Exact gradients of sum(grad_out * forward_train(x)). Throws CacheError if
  /// parameters changed since the forward pass that filled `cache`.
  RegressorGradients backward(const Cache& cache, MatrixView grad_out) const;

  /// fc1.W, fc1.b, bn.gamma, bn.beta, fc2.W, fc2.b. Invalidates caches.
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;

  std::span<const double> running_mean() const noexcept { return running_mean_; }
  std::span<const double> running_var() const noexcept { return running_var_; }

  void encode(io::Writer& w) const;
  static ResidualRegressor decode(io::Reader& r);

  friend bool operator==(const ResidualRegressor& a, const ResidualRegressor& b) {
    return a.shape_ == b.shape_ && a.hyper_ == b.hyper_ && a.fc1_w_ == b.fc1_w_ && a.fc1_b_ == b.fc1_b_ &&
           a.gamma_ == b.gamma_ && a.beta_ == b.beta_ && a.running_mean_ == b.running_mean_ &&
           a.running_var_ == b.running_var_ && a.fc2_w_ == b.fc2_w_ && a.fc2_b_ == b.fc2_b_;
  }

 private:
  Matrix train_impl(MatrixView x, const Matrix* mask, Rng* rng, Cache& cache);
  void dense(MatrixView x, const Matrix& w, std::span<const double> b, Matrix& out) const;
  void add_skip(MatrixView x, Matrix& out) const;

  RegressorShape shape_{};
  RegressorHyper hyper_{};
  Matrix fc1_w_;
  std::vector<double> fc1_b_;
  std::vector<double> gamma_;
  std::vector<double> beta_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  Matrix fc2_w_;
  std::vector<double> fc2_b_;
  std::uint64_t version_ = 0;
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

/// Mean over the batch of squared Euclidean distance; grad = 2 (pred - target) / B.
LossResult mse_loss(MatrixView pred, MatrixView target);

/// Momentum buffers for one network.
struct TrainState {
  std::vector<std::vector<double>> velocity;
  std::uint64_t step = 0;

  static TrainState for_network(const ResidualRegressor& net);
};

/// v <- momentum * v + g; theta <- theta - lr * v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum);
void sgd_step(ResidualRegressor& net, const RegressorGradients& grads, TrainState& state, double lr, double momentum);

}  // namespace metafunc
