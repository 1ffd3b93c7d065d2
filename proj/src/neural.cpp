#include "metafunc/neural.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metafunc/error.hpp"
#include "metafunc/simd/kernels.hpp"

namespace metafunc {
namespace {

void check_width(MatrixView x, std::size_t expected, const char* what) {
  require(x.cols == expected, ErrorCode::DimensionError,
          std::string(what) + ": width " + std::to_string(x.cols) + ", expected " + std::to_string(expected));
}

}  // namespace

std::vector<std::span<const double>> RegressorGradients::blocks() const {
  return {fc1_weight.data, fc1_bias, bn_gamma, bn_beta, fc2_weight.data, fc2_bias};
}

ResidualRegressor::ResidualRegressor(const RegressorShape& shape, std::uint64_t init_seed, const RegressorHyper& hyper)
    : shape_(shape), hyper_(hyper) {
  require(shape.in_dim > 0 && shape.hidden > 0 && shape.out_dim > 0, ErrorCode::DimensionError,
          "regressor dimensions must be positive");
  require(shape.skip_len == 0 || shape.skip_len == shape.out_dim, ErrorCode::DimensionError,
          "skip slice length must equal out_dim or be 0");
  require(shape.skip_offset + shape.skip_len <= shape.in_dim, ErrorCode::DimensionError,
          "skip slice exceeds input width");
  require(hyper.keep_prob > 0.0 && hyper.keep_prob <= 1.0, ErrorCode::ConfigError, "keep probability must be in (0,1]");

  fc1_w_ = Matrix(shape.hidden, shape.in_dim);
  fc1_b_.assign(shape.hidden, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.in_dim));
  Rng rng(init_seed);
  for (double& v : fc1_w_.data) v = rng.uniform(-bound, bound);
  for (double& v : fc1_b_) v = rng.uniform(-bound, bound);
  gamma_.assign(shape.hidden, 1.0);
  beta_.assign(shape.hidden, 0.0);
  running_mean_.assign(shape.hidden, 0.0);
  running_var_.assign(shape.hidden, 1.0);
  fc2_w_ = Matrix(shape.out_dim, shape.hidden);
  fc2_b_.assign(shape.out_dim, 0.0);
}

std::size_t ResidualRegressor::default_hidden(std::size_t out_dim) noexcept {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.375 * static_cast<double>(out_dim))));
}

void ResidualRegressor::dense(MatrixView x, const Matrix& w, std::span<const double> b, Matrix& out) const {
  out = Matrix(x.rows, w.rows);
  const auto& k = simd::active();
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.data + i * x.cols;
    for (std::size_t o = 0; o < w.rows; ++o) out(i, o) = k.dot(xi, w.data.data() + o * w.cols, w.cols) + b[o];
  }
}

void ResidualRegressor::add_skip(MatrixView x, Matrix& out) const {
  if (shape_.skip_len == 0) return;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < shape_.skip_len; ++j) out(i, j) += x(i, shape_.skip_offset + j);
}

Matrix ResidualRegressor::forward_eval(MatrixView x) const {
  check_width(x, shape_.in_dim, "forward");
  Matrix h;
  dense(x, fc1_w_, fc1_b_, h);
  for (std::size_t j = 0; j < shape_.hidden; ++j) {
    const double inv = 1.0 / std::sqrt(running_var_[j] + hyper_.bn_eps);
    for (std::size_t i = 0; i < h.rows; ++i) {
      const double a = gamma_[j] * (h(i, j) - running_mean_[j]) * inv + beta_[j];
      h(i, j) = a > 0.0 ? a : hyper_.leaky_slope * a;
    }
  }
  Matrix out;
  dense(h, fc2_w_, fc2_b_, out);
  add_skip(x, out);
  return out;
}

Matrix ResidualRegressor::forward_train(MatrixView x, Rng& rng, Cache& cache) {
  return train_impl(x, nullptr, &rng, cache);
}

Matrix ResidualRegressor::forward_train(MatrixView x, const Matrix& mask, Cache& cache) {
  return train_impl(x, &mask, nullptr, cache);
}

Matrix ResidualRegressor::train_impl(MatrixView x, const Matrix* mask, Rng* rng, Cache& cache) {
  check_width(x, shape_.in_dim, "forward");
  require(x.rows >= 2, ErrorCode::BatchTooSmall, "train-mode forward needs a batch of at least 2");
  const std::size_t B = x.rows;
  const std::size_t H = shape_.hidden;

  cache.input = Matrix(B, x.cols);
  std::copy(x.data, x.data + B * x.cols, cache.input.data.begin());

  Matrix z;
  dense(x, fc1_w_, fc1_b_, z);

  cache.normalized = Matrix(B, H);
  cache.activated = Matrix(B, H);
  cache.inv_std.assign(H, 0.0);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t j = 0; j < H; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < B; ++i) mean += z(i, j);
    mean *= inv_b;
    double var = 0.0;
    for (std::size_t i = 0; i < B; ++i) var += (z(i, j) - mean) * (z(i, j) - mean);
    var *= inv_b;
    const double inv = 1.0 / std::sqrt(var + hyper_.bn_eps);
    cache.inv_std[j] = inv;
    for (std::size_t i = 0; i < B; ++i) {
      const double xhat = (z(i, j) - mean) * inv;
      cache.normalized(i, j) = xhat;
      cache.activated(i, j) = gamma_[j] * xhat + beta_[j];
    }
    // Running variance tracks the biased batch variance used for normalisation.
    running_mean_[j] = (1.0 - hyper_.bn_momentum) * running_mean_[j] + hyper_.bn_momentum * mean;
    running_var_[j] = (1.0 - hyper_.bn_momentum) * running_var_[j] + hyper_.bn_momentum * var;
  }

  if (mask) {
    require(mask->rows == B && mask->cols == H, ErrorCode::DimensionError, "dropout mask shape mismatch");
    cache.mask = *mask;
  } else {
    cache.mask = Matrix(B, H, 1.0);
    if (hyper_.keep_prob < 1.0) {
      const double scale = 1.0 / hyper_.keep_prob;
      for (double& m : cache.mask.data) m = rng->uniform() < hyper_.keep_prob ? scale : 0.0;
    }
  }

  cache.dropped = Matrix(B, H);
  for (std::size_t n = 0; n < B * H; ++n) {
    const double a = cache.activated.data[n];
    cache.dropped.data[n] = (a > 0.0 ? a : hyper_.leaky_slope * a) * cache.mask.data[n];
  }

  Matrix out;
  dense(cache.dropped, fc2_w_, fc2_b_, out);
  add_skip(x, out);
  cache.version = version_;
  return out;
}

RegressorGradients ResidualRegressor::backward(const Cache& cache, MatrixView grad_out) const {
  require(cache.version == version_, ErrorCode::CacheError, "cache does not match current parameters");
  const std::size_t B = cache.input.rows;
  const std::size_t H = shape_.hidden;
  const std::size_t D = shape_.in_dim;
  const std::size_t O = shape_.out_dim;
  require(grad_out.rows == B && grad_out.cols == O, ErrorCode::DimensionError, "grad_out shape mismatch");
  const auto& k = simd::active();

  RegressorGradients g;
  g.fc2_weight = Matrix(O, H);
  g.fc2_bias.assign(O, 0.0);
  Matrix d_dropped(B, H);
  for (std::size_t i = 0; i < B; ++i) {
    const double* hd = cache.dropped.data.data() + i * H;
    double* dh = d_dropped.data.data() + i * H;
    for (std::size_t o = 0; o < O; ++o) {
      const double go = grad_out(i, o);
      if (go == 0.0) continue;
      k.axpy(go, hd, g.fc2_weight.data.data() + o * H, H);
      k.axpy(go, fc2_w_.data.data() + o * H, dh, H);
      g.fc2_bias[o] += go;
    }
  }

  // Through dropout and LeakyReLU into the BN output.
  Matrix d_act(B, H);
  for (std::size_t n = 0; n < B * H; ++n) {
    const double slope = cache.activated.data[n] > 0.0 ? 1.0 : hyper_.leaky_slope;
    d_act.data[n] = d_dropped.data[n] * cache.mask.data[n] * slope;
  }

  g.bn_gamma.assign(H, 0.0);
  g.bn_beta.assign(H, 0.0);
  Matrix dz(B, H);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t j = 0; j < H; ++j) {
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      const double da = d_act(i, j);
      const double xhat = cache.normalized(i, j);
      g.bn_gamma[j] += da * xhat;
      g.bn_beta[j] += da;
      const double dxhat = da * gamma_[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    for (std::size_t i = 0; i < B; ++i) {
      const double dxhat = d_act(i, j) * gamma_[j];
      dz(i, j) = cache.inv_std[j] * (dxhat - inv_b * sum_dxhat - cache.normalized(i, j) * inv_b * sum_dxhat_xhat);
    }
  }

  g.fc1_weight = Matrix(H, D);
  g.fc1_bias.assign(H, 0.0);
  g.input = Matrix(B, D);
  for (std::size_t i = 0; i < B; ++i) {
    const double* xi = cache.input.data.data() + i * D;
    double* dxi = g.input.data.data() + i * D;
    for (std::size_t j = 0; j < H; ++j) {
      const double d = dz(i, j);
      k.axpy(d, xi, g.fc1_weight.data.data() + j * D, D);
      k.axpy(d, fc1_w_.data.data() + j * D, dxi, D);
      g.fc1_bias[j] += d;
    }
    for (std::size_t o = 0; o < shape_.skip_len; ++o) dxi[shape_.skip_offset + o] += grad_out(i, o);
  }
  return g;
}

std::vector<std::span<double>> ResidualRegressor::parameter_blocks() {
  ++version_;
  return {fc1_w_.data, fc1_b_, gamma_, beta_, fc2_w_.data, fc2_b_};
}

std::vector<std::span<const double>> ResidualRegressor::parameter_blocks() const {
  return {fc1_w_.data, fc1_b_, gamma_, beta_, fc2_w_.data, fc2_b_};
}

void ResidualRegressor::encode(io::Writer& w) const {
  w.magic("MFLN");
  w.u32(static_cast<std::uint32_t>(shape_.in_dim));
  w.u32(static_cast<std::uint32_t>(shape_.hidden));
  w.u32(static_cast<std::uint32_t>(shape_.out_dim));
  w.u32(static_cast<std::uint32_t>(shape_.skip_offset));
  w.u32(static_cast<std::uint32_t>(shape_.skip_len));
  w.f32(static_cast<float>(hyper_.bn_momentum));
  w.f32(static_cast<float>(hyper_.bn_eps));
  w.f32(static_cast<float>(hyper_.keep_prob));
  w.f32(static_cast<float>(hyper_.leaky_slope));
  w.f32_array(std::span<const double>(fc1_w_.data));
  w.f32_array(std::span<const double>(fc1_b_));
  w.f32_array(std::span<const double>(gamma_));
  w.f32_array(std::span<const double>(beta_));
  w.f32_array(std::span<const double>(running_mean_));
  w.f32_array(std::span<const double>(running_var_));
  w.f32_array(std::span<const double>(fc2_w_.data));
  w.f32_array(std::span<const double>(fc2_b_));
}

ResidualRegressor ResidualRegressor::decode(io::Reader& r) {
  r.expect_magic("MFLN");
  RegressorShape shape;
  shape.in_dim = r.u32();
  shape.hidden = r.u32();
  shape.out_dim = r.u32();
  shape.skip_offset = r.u32();
  shape.skip_len = r.u32();
  RegressorHyper hyper;
  hyper.bn_momentum = r.f32();
  hyper.bn_eps = r.f32();
  hyper.keep_prob = r.f32();
  hyper.leaky_slope = r.f32();
  require(shape.in_dim > 0 && shape.hidden > 0 && shape.out_dim > 0, ErrorCode::FormatError,
          "network checkpoint has zero dimension");
  require((shape.skip_len == 0 || shape.skip_len == shape.out_dim) &&
              shape.skip_offset + shape.skip_len <= shape.in_dim,
          ErrorCode::FormatError, "network checkpoint has invalid skip slice");
  require(hyper.keep_prob > 0.0 && hyper.keep_prob <= 1.0, ErrorCode::FormatError,
          "network checkpoint has invalid keep probability");
  // Overflow guard before allocating.
  const std::uint64_t need = 4ull * (std::uint64_t{shape.hidden} * shape.in_dim + 5ull * shape.hidden +
                                     std::uint64_t{shape.out_dim} * shape.hidden + shape.out_dim);
  require(need <= r.remaining(), ErrorCode::FormatError, "truncated payload");

  ResidualRegressor net;
  net.shape_ = shape;
  net.hyper_ = hyper;
  net.fc1_w_ = Matrix(shape.hidden, shape.in_dim);
  net.fc1_w_.data = r.f32_array_as_double(shape.hidden * shape.in_dim);
  net.fc1_b_ = r.f32_array_as_double(shape.hidden);
  net.gamma_ = r.f32_array_as_double(shape.hidden);
  net.beta_ = r.f32_array_as_double(shape.hidden);
  net.running_mean_ = r.f32_array_as_double(shape.hidden);
  net.running_var_ = r.f32_array_as_double(shape.hidden);
  net.fc2_w_ = Matrix(shape.out_dim, shape.hidden);
  net.fc2_w_.data = r.f32_array_as_double(shape.out_dim * shape.hidden);
  net.fc2_b_ = r.f32_array_as_double(shape.out_dim);
  for (double v : net.running_mean_) require(std::isfinite(v), ErrorCode::FormatError, "non-finite running mean");
  for (double v : net.running_var_)
    require(std::isfinite(v) && v >= 0.0, ErrorCode::FormatError, "invalid running variance");
  return net;
}

LossResult mse_loss(MatrixView pred, MatrixView target) {
  require(pred.rows == target.rows && pred.cols == target.cols, ErrorCode::DimensionError, "mse_loss shape mismatch");
  require(pred.rows > 0, ErrorCode::DimensionError, "mse_loss on empty batch");
  LossResult r;
  r.grad = Matrix(pred.rows, pred.cols);
  const double inv_b = 1.0 / static_cast<double>(pred.rows);
  double total = 0.0;
  for (std::size_t n = 0; n < pred.rows * pred.cols; ++n) {
    const double diff = pred.data[n] - target.data[n];
    total += diff * diff;
    r.grad.data[n] = 2.0 * diff * inv_b;
  }
  r.loss = total * inv_b;
  return r;
}

TrainState TrainState::for_network(const ResidualRegressor& net) {
  TrainState st;
  for (auto block : net.parameter_blocks()) st.velocity.emplace_back(block.size(), 0.0);
  return st;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum) {
  require(params.size() == grads.size() && params.size() == velocity.size(), ErrorCode::DimensionError,
          "sgd_step shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void sgd_step(ResidualRegressor& net, const RegressorGradients& grads, TrainState& state, double lr, double momentum) {
  auto params = net.parameter_blocks();
  const auto g = grads.blocks();
  require(state.velocity.size() == params.size(), ErrorCode::DimensionError, "train state does not match network");
  for (std::size_t b = 0; b < params.size(); ++b) sgd_step(params[b], g[b], state.velocity[b], lr, momentum);
  ++state.step;
}

}  // namespace metafunc
