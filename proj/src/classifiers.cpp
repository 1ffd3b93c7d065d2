#include "metafunc/classifiers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "metafunc/binary_io.hpp"
#include "metafunc/error.hpp"
#include "metafunc/simd/kernels.hpp"

namespace metafunc {

std::vector<double> LinearClassifier::flatten() const {
  std::vector<double> flat(weights);
  flat.push_back(bias);
  return flat;
}

LinearClassifier LinearClassifier::unflatten(std::span<const double> flat) {
  require(flat.size() >= 2, ErrorCode::DimensionError, "flattened classifier needs at least 2 values");
  return {{flat.begin(), flat.end() - 1}, flat.back()};
}

MulticlassLinear::MulticlassLinear(std::size_t num_classes, std::size_t dim)
    : num_classes_(num_classes), dim_(dim), params_(num_classes * (dim + 1), 0.0) {}

MulticlassLinear MulticlassLinear::unflatten(std::span<const double> flat, std::size_t num_classes) {
  require(num_classes >= 1 && flat.size() % num_classes == 0 && flat.size() / num_classes >= 2,
          ErrorCode::DimensionError, "flattened length not divisible into classes");
  MulticlassLinear m(num_classes, flat.size() / num_classes - 1);
  std::copy(flat.begin(), flat.end(), m.params_.begin());
  return m;
}

std::vector<double> MulticlassLinear::scores(std::span<const double> x) const {
  require(x.size() == dim_, ErrorCode::DimensionError, "input dimension mismatch");
  std::vector<double> s(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) s[c] = simd::dot(weights(c), x) + bias(c);
  return s;
}

std::size_t MulticlassLinear::predict(std::span<const double> x) const {
  const auto s = scores(x);
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double norm2(std::span<const double> v) { return std::sqrt(simd::dot(v, v)); }

void check_features(MatrixView X, std::size_t n_labels) {
  require(X.rows == n_labels, ErrorCode::DimensionError, "feature rows and label count differ");
  require(X.rows > 0 && X.cols > 0, ErrorCode::DegenerateLabels, "empty training set");
  for (std::size_t i = 0; i < X.rows * X.cols; ++i)
    require(std::isfinite(X.data[i]), ErrorCode::DataError, "non-finite feature value");
}

void check_binary_labels(std::span<const int> y) {
  bool pos = false, neg = false;
  for (const int v : y) {
    require(v == 1 || v == -1, ErrorCode::DataError, "binary labels must be -1 or +1");
    pos |= v == 1;
    neg |= v == -1;
  }
  require(pos && neg, ErrorCode::DegenerateLabels, "binary training needs both classes");
}

/// Smooth convex objective over a flat parameter vector.
class SmoothProblem {
 public:
  virtual ~SmoothProblem() = default;
  virtual std::size_t size() const = 0;
  virtual double value(std::span<const double> theta) const = 0;
  virtual void gradient(std::span<const double> theta, std::span<double> g) const = 0;
  virtual void hessian(std::span<const double> theta, Eigen::MatrixXd& H) const = 0;
};

class LogisticProblem final : public SmoothProblem {
 public:
  LogisticProblem(MatrixView X, std::span<const int> y, double C) : X_(X), y_(y), C_(C) {}

  std::size_t size() const override { return X_.cols + 1; }

  double value(std::span<const double> theta) const override {
    const auto w = theta.first(X_.cols);
    const double b = theta[X_.cols];
    double f = 0.5 * simd::dot(w, w);
    for (std::size_t i = 0; i < X_.rows; ++i) f += C_ * softplus(-y_[i] * (simd::dot(w, X_.row(i)) + b));
    return f;
  }

  void gradient(std::span<const double> theta, std::span<double> g) const override {
    const std::size_t d = X_.cols;
    const auto w = theta.first(d);
    const double b = theta[d];
    std::copy(w.begin(), w.end(), g.begin());
    g[d] = 0.0;
    for (std::size_t i = 0; i < X_.rows; ++i) {
      const double m = y_[i] * (simd::dot(w, X_.row(i)) + b);
      const double coef = -C_ * y_[i] * sigmoid(-m);
      simd::axpy(coef, X_.row(i), g.first(d));
      g[d] += coef;
    }
  }

  void hessian(std::span<const double> theta, Eigen::MatrixXd& H) const override {
    const std::size_t d = X_.cols;
    const auto w = theta.first(d);
    const double b = theta[d];
    H.setZero(d + 1, d + 1);
    for (std::size_t j = 0; j < d; ++j) H(j, j) = 1.0;
    Eigen::VectorXd xt(d + 1);
    for (std::size_t i = 0; i < X_.rows; ++i) {
      const double m = y_[i] * (simd::dot(w, X_.row(i)) + b);
      const double s = C_ * sigmoid(m) * sigmoid(-m);
      for (std::size_t j = 0; j < d; ++j) xt[j] = X_(i, j);
      xt[d] = 1.0;
      H.noalias() += s * xt * xt.transpose();
    }
  }

 private:
  MatrixView X_;
  std::span<const int> y_;
  double C_;
};

class SoftmaxProblem final : public SmoothProblem {
 public:
  SoftmaxProblem(MatrixView X, std::span<const int> y, double C, std::size_t n_classes)
      : X_(X), y_(y), C_(C), n_(n_classes) {}

  std::size_t size() const override { return n_ * (X_.cols + 1); }

  double value(std::span<const double> theta) const override {
    const std::size_t d = X_.cols;
    double f = 0.0;
    for (std::size_t c = 0; c < n_; ++c) {
      const auto w = theta.subspan(c * (d + 1), d);
      f += 0.5 * simd::dot(w, w);
    }
    std::vector<double> z(n_);
    for (std::size_t i = 0; i < X_.rows; ++i) {
      logits(theta, i, z);
      const double zmax = *std::max_element(z.begin(), z.end());
      double se = 0.0;
      for (const double v : z) se += std::exp(v - zmax);
      f += C_ * (zmax + std::log(se) - z[static_cast<std::size_t>(y_[i])]);
    }
    return f;
  }

  void gradient(std::span<const double> theta, std::span<double> g) const override {
    const std::size_t d = X_.cols;
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t c = 0; c < n_; ++c)
      std::copy_n(theta.begin() + c * (d + 1), d, g.begin() + c * (d + 1));
    std::vector<double> p(n_);
    for (std::size_t i = 0; i < X_.rows; ++i) {
      probabilities(theta, i, p);
      for (std::size_t c = 0; c < n_; ++c) {
        const double coef = C_ * (p[c] - (static_cast<std::size_t>(y_[i]) == c ? 1.0 : 0.0));
        simd::axpy(coef, X_.row(i), g.subspan(c * (d + 1), d));
        g[c * (d + 1) + d] += coef;
      }
    }
  }

  void hessian(std::span<const double> theta, Eigen::MatrixXd& H) const override {
    const std::size_t d = X_.cols;
    const std::size_t k = d + 1;
    H.setZero(n_ * k, n_ * k);
    for (std::size_t c = 0; c < n_; ++c) {
      for (std::size_t j = 0; j < d; ++j) H(c * k + j, c * k + j) = 1.0;
      // Softmax is invariant to a common bias shift; a tiny ridge keeps the
      // system non-singular along that direction, where the gradient is zero.
      H(c * k + d, c * k + d) = 1e-10;
    }
    std::vector<double> p(n_);
    Eigen::VectorXd xt(k);
    Eigen::MatrixXd outer(k, k);
    for (std::size_t i = 0; i < X_.rows; ++i) {
      probabilities(theta, i, p);
      for (std::size_t j = 0; j < d; ++j) xt[j] = X_(i, j);
      xt[d] = 1.0;
      outer.noalias() = xt * xt.transpose();
      for (std::size_t a = 0; a < n_; ++a)
        for (std::size_t b = 0; b < n_; ++b) {
          const double coef = C_ * ((a == b ? p[a] : 0.0) - p[a] * p[b]);
          H.block(a * k, b * k, k, k) += coef * outer;
        }
    }
  }

 private:
  void logits(std::span<const double> theta, std::size_t i, std::vector<double>& z) const {
    const std::size_t d = X_.cols;
    for (std::size_t c = 0; c < n_; ++c)
      z[c] = simd::dot(theta.subspan(c * (d + 1), d), X_.row(i)) + theta[c * (d + 1) + d];
  }

  void probabilities(std::span<const double> theta, std::size_t i, std::vector<double>& p) const {
    logits(theta, i, p);
    const double zmax = *std::max_element(p.begin(), p.end());
    double se = 0.0;
    for (auto& v : p) se += (v = std::exp(v - zmax));
    for (auto& v : p) v /= se;
  }

  MatrixView X_;
  std::span<const int> y_;
  double C_;
  std::size_t n_;
};

std::vector<double> minimize(const SmoothProblem& problem, const FitConfig& cfg, FitInfo& info) {
  require(cfg.C > 0.0 && std::isfinite(cfg.C), ErrorCode::ConfigError, "C must be positive");
  require(cfg.tol > 0.0, ErrorCode::ConfigError, "tol must be positive");
  require(cfg.max_iter > 0, ErrorCode::ConfigError, "max_iter must be positive");
  const std::size_t p = problem.size();
  std::vector<double> theta(p, 0.0), g(p), dir(p), trial(p);
  double f = problem.value(theta);
  info.objective_trace = {f};
  double gd_step = 1.0;
  Eigen::MatrixXd H;

  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    problem.gradient(theta, g);
    if (norm2(g) <= cfg.tol) break;

    if (cfg.step.kind == StepRule::Kind::fixed) {
      simd::axpy(-cfg.step.eta, g, theta);
      f = problem.value(theta);
      require(std::isfinite(f), ErrorCode::NumericalError, "objective diverged; reduce the fixed step");
      info.objective_trace.push_back(f);
      continue;
    }

    bool newton = cfg.step.kind == StepRule::Kind::newton;
    if (newton) {
      problem.hessian(theta, H);
      const Eigen::Map<const Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(p));
      const Eigen::VectorXd step = H.ldlt().solve(-gv);
      std::copy(step.data(), step.data() + p, dir.begin());
      const double slope = simd::dot(g, dir);
      newton = step.allFinite() && slope < 0.0;
    }
    if (!newton) {
      for (std::size_t j = 0; j < p; ++j) dir[j] = -g[j];
    }
    const double slope = simd::dot(g, dir);

    double t = newton ? 1.0 : std::min(1.0, 2.0 * gd_step);
    bool accepted = false;
    double f_new = f;
    for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
      for (std::size_t j = 0; j < p; ++j) trial[j] = theta[j] + t * dir[j];
      f_new = problem.value(trial);
      if (f_new <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      // Near the optimum the decrease can fall below rounding; accept a step
      // that does not raise the objective and shrinks the gradient.
      if (f_new <= f) {
        std::vector<double> g_trial(p);
        problem.gradient(trial, g_trial);
        if (norm2(g_trial) < norm2(g)) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) break;
    if (!newton) gd_step = t;
    theta.swap(trial);
    f = f_new;
    info.objective_trace.push_back(f);
  }

  problem.gradient(theta, g);
  info.iterations = it;
  info.grad_norm = norm2(g);
  info.converged = info.grad_norm <= cfg.tol;
  info.objective = f;
  return theta;
}

}  // namespace

double logistic_objective(const LinearClassifier& clf, MatrixView X, std::span<const int> y, double C) {
  require(clf.dim() == X.cols, ErrorCode::DimensionError, "classifier/feature dimension mismatch");
  return LogisticProblem(X, y, C).value(clf.flatten());
}

std::vector<double> logistic_gradient(const LinearClassifier& clf, MatrixView X, std::span<const int> y, double C) {
  require(clf.dim() == X.cols, ErrorCode::DimensionError, "classifier/feature dimension mismatch");
  std::vector<double> g(X.cols + 1);
  LogisticProblem(X, y, C).gradient(clf.flatten(), g);
  return g;
}

double softmax_objective(const MulticlassLinear& model, MatrixView X, std::span<const int> y, double C) {
  require(model.dim() == X.cols, ErrorCode::DimensionError, "model/feature dimension mismatch");
  return SoftmaxProblem(X, y, C, model.num_classes()).value(model.flat());
}

std::vector<double> softmax_gradient(const MulticlassLinear& model, MatrixView X, std::span<const int> y, double C) {
  require(model.dim() == X.cols, ErrorCode::DimensionError, "model/feature dimension mismatch");
  std::vector<double> g(model.flat().size());
  SoftmaxProblem(X, y, C, model.num_classes()).gradient(model.flat(), g);
  return g;
}

double hinge_objective(const LinearClassifier& clf, MatrixView X, std::span<const int> y, double C) {
  require(clf.dim() == X.cols, ErrorCode::DimensionError, "classifier/feature dimension mismatch");
  double f = 0.5 * simd::dot(clf.weights, clf.weights);
  for (std::size_t i = 0; i < X.rows; ++i)
    f += C * std::max(0.0, 1.0 - y[i] * (simd::dot(clf.weights, X.row(i)) + clf.bias));
  return f;
}

Fitted<LinearClassifier> train_logistic(MatrixView X, std::span<const int> y, const FitConfig& cfg) {
  check_features(X, y.size());
  check_binary_labels(y);
  Fitted<LinearClassifier> out;
  const auto theta = minimize(LogisticProblem(X, y, cfg.C), cfg, out.info);
  out.model = LinearClassifier::unflatten(theta);
  return out;
}

Fitted<LinearClassifier> train_linear_svm(MatrixView X, std::span<const int> y, const FitConfig& cfg) {
  check_features(X, y.size());
  check_binary_labels(y);
  require(cfg.C > 0.0 && std::isfinite(cfg.C), ErrorCode::ConfigError, "C must be positive");
  require(cfg.tol > 0.0 && cfg.max_iter > 0, ErrorCode::ConfigError, "tol and max_iter must be positive");
  const std::size_t d = X.cols;
  constexpr int kWindow = 100;
  // The objective is 1-strongly convex in w, which makes eta/(t+1) with eta=1
  // the natural schedule; a fixed rule overrides the base step.
  const double eta0 = cfg.step.kind == StepRule::Kind::fixed ? cfg.step.eta : 1.0;

  LinearClassifier cur{std::vector<double>(d, 0.0), 0.0};
  LinearClassifier best = cur;
  Fitted<LinearClassifier> out;
  double f = hinge_objective(cur, X, y, cfg.C);
  double best_f = f;
  double window_start_f = f;
  out.info.objective_trace = {f};
  std::vector<double> gw(d);

  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    std::copy(cur.weights.begin(), cur.weights.end(), gw.begin());
    double gb = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) {
      if (y[i] * (simd::dot(cur.weights, X.row(i)) + cur.bias) < 1.0) {
        simd::axpy(-cfg.C * y[i], X.row(i), gw);
        gb -= cfg.C * y[i];
      }
    }
    const double eta = eta0 / (it + 1.0);
    simd::axpy(-eta, gw, cur.weights);
    cur.bias -= eta * gb;
    f = hinge_objective(cur, X, y, cfg.C);
    out.info.objective_trace.push_back(f);
    if (f < best_f) {
      best_f = f;
      best = cur;
    }
    if ((it + 1) % kWindow == 0) {
      if (window_start_f - best_f <= cfg.tol * std::max(1.0, std::abs(best_f))) {
        out.info.converged = true;
        ++it;
        break;
      }
      window_start_f = best_f;
    }
  }

  // Subgradient at the returned point, taking hinge kinks as inactive.
  std::copy(best.weights.begin(), best.weights.end(), gw.begin());
  double gb = 0.0;
  for (std::size_t i = 0; i < X.rows; ++i)
    if (y[i] * (simd::dot(best.weights, X.row(i)) + best.bias) < 1.0) {
      simd::axpy(-cfg.C * y[i], X.row(i), gw);
      gb -= cfg.C * y[i];
    }
  out.info.iterations = it;
  out.info.grad_norm = std::sqrt(simd::dot(gw, gw) + gb * gb);
  out.info.objective = best_f;
  out.model = std::move(best);
  return out;
}

Fitted<MulticlassLinear> train_softmax(MatrixView X, std::span<const int> y, const FitConfig& cfg,
                                       std::size_t num_classes) {
  check_features(X, y.size());
  int max_label = -1;
  for (const int v : y) {
    require(v >= 0, ErrorCode::DataError, "multiclass labels must be non-negative");
    max_label = std::max(max_label, v);
  }
  const std::size_t n = num_classes ? num_classes : static_cast<std::size_t>(max_label) + 1;
  require(n >= 2, ErrorCode::DegenerateLabels, "softmax needs at least two classes");
  require(static_cast<std::size_t>(max_label) < n, ErrorCode::DataError, "label exceeds class count");
  std::vector<bool> seen(n, false);
  for (const int v : y) seen[static_cast<std::size_t>(v)] = true;
  require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }), ErrorCode::DegenerateLabels,
          "every class needs at least one example");

  Fitted<MulticlassLinear> out;
  auto theta = minimize(SoftmaxProblem(X, y, cfg.C, n), cfg, out.info);
  const std::size_t d = X.cols;
  double mean_bias = 0.0;
  for (std::size_t c = 0; c < n; ++c) mean_bias += theta[c * (d + 1) + d];
  mean_bias /= static_cast<double>(n);
  for (std::size_t c = 0; c < n; ++c) theta[c * (d + 1) + d] -= mean_bias;
  out.model = MulticlassLinear::unflatten(theta, n);
  return out;
}

double decision(const LinearClassifier& clf, std::span<const double> x) {
  require(x.size() == clf.dim(), ErrorCode::DimensionError,
          "input has " + std::to_string(x.size()) + " dims, classifier " + std::to_string(clf.dim()));
  return simd::dot(clf.weights, x) + clf.bias;
}

std::size_t predict_ova(std::span<const LinearClassifier> clfs, std::span<const double> x) {
  require(clfs.size() >= 2, ErrorCode::DimensionError, "one-vs-all prediction needs at least two classifiers");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < clfs.size(); ++c) {
    const double s = decision(clfs[c], x);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

std::vector<double> PrototypePair::flatten() const {
  std::vector<double> flat(positive);
  flat.insert(flat.end(), negative.begin(), negative.end());
  return flat;
}

std::vector<double> row_mean(MatrixView X) {
  require(X.rows > 0, ErrorCode::EmptyClass, "mean of an empty sample");
  std::vector<double> m(X.cols, 0.0);
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t j = 0; j < X.cols; ++j) m[j] += X(i, j);
  for (auto& v : m) v /= static_cast<double>(X.rows);
  return m;
}

PrototypePair compute_prototypes(MatrixView X_pos, MatrixView X_neg) {
  require(X_pos.rows > 0 && X_neg.rows > 0, ErrorCode::EmptyClass, "prototype side is empty");
  require(X_pos.cols == X_neg.cols, ErrorCode::DimensionError, "prototype sides differ in dimension");
  return {row_mean(X_pos), row_mean(X_neg)};
}

StoredClassifiers to_stored(const LinearClassifier& clf) {
  return {ClassifierKind::binary, clf.dim(), 1, clf.flatten()};
}

StoredClassifiers to_stored(const MulticlassLinear& model) {
  return {ClassifierKind::multiclass, model.dim(), model.num_classes(), model.flatten()};
}

StoredClassifiers to_stored(std::span<const LinearClassifier> bank) {
  require(!bank.empty(), ErrorCode::DimensionError, "empty classifier bank");
  StoredClassifiers s{ClassifierKind::one_vs_all, bank.front().dim(), bank.size(), {}};
  for (const auto& c : bank) {
    require(c.dim() == s.dim, ErrorCode::DimensionError, "classifier bank dims differ");
    const auto f = c.flatten();
    s.flat.insert(s.flat.end(), f.begin(), f.end());
  }
  return s;
}

void save_classifiers(const StoredClassifiers& stored, const std::filesystem::path& path) {
  require(stored.flat.size() == stored.num_classes * (stored.dim + 1), ErrorCode::DimensionError,
          "payload length does not match header");
  io::Writer w;
  w.magic("CLSF");
  w.u32(static_cast<std::uint32_t>(stored.dim));
  w.u32(static_cast<std::uint32_t>(stored.num_classes));
  w.u32(static_cast<std::uint32_t>(stored.kind));
  w.f32_array(std::span<const double>(stored.flat));
  w.write_file(path);
}

StoredClassifiers load_classifiers(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  r.expect_magic("CLSF");
  StoredClassifiers s;
  s.dim = r.u32();
  s.num_classes = r.u32();
  const auto kind = r.u32();
  require(kind <= 2, ErrorCode::FormatError, "unknown classifier kind");
  require(s.dim > 0 && s.num_classes > 0, ErrorCode::FormatError, "empty classifier header");
  s.kind = static_cast<ClassifierKind>(kind);
  s.flat = r.f32_array_as_double(s.num_classes * (s.dim + 1));
  r.expect_end();
  return s;
}

}  // namespace metafunc
