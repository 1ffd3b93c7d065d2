#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "metafunc/matrix.hpp"

namespace metafunc {

/// Binary linear function sign(w.x + b). Flattened layout is [w..., b].
struct LinearClassifier {
  std::vector<double> weights;
  double bias = 0.0;

  std::size_t dim() const noexcept { return weights.size(); }
  std::size_t flat_size() const noexcept { return weights.size() + 1; }

  std::vector<double> flatten() const;
  /// Needs at least two values (one weight and the bias).
  static LinearClassifier unflatten(std::span<const double> flat);

  friend bool operator==(const LinearClassifier&, const LinearClassifier&) = default;
};

/// N-class linear model; flattened layout is N consecutive [w_c..., b_c] blocks.
class MulticlassLinear {
 public:
  MulticlassLinear() = default;
  MulticlassLinear(std::size_t num_classes, std::size_t dim);
  static MulticlassLinear unflatten(std::span<const double> flat, std::size_t num_classes);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> flat() const noexcept { return params_; }
  std::span<double> flat() noexcept { return params_; }
  std::vector<double> flatten() const { return params_; }

  std::span<const double> weights(std::size_t c) const noexcept { return {params_.data() + c * (dim_ + 1), dim_}; }
  double bias(std::size_t c) const noexcept { return params_[c * (dim_ + 1) + dim_]; }

  std::vector<double> scores(std::span<const double> x) const;
  /// Argmax of scores; ties go to the lowest class index.
  std::size_t predict(std::span<const double> x) const;

  friend bool operator==(const MulticlassLinear&, const MulticlassLinear&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> params_;
};

struct StepRule {
  enum class Kind {
    fixed,         ///< gradient descent with constant step `eta`
    backtracking,  ///< gradient descent with Armijo backtracking
    newton,        ///< Newton direction with Armijo backtracking
  };
  Kind kind = Kind::newton;
  double eta = 0.1;
};

struct FitConfig {
  double C = 1.0;  ///< multiplies the data term; the regulariser is 1/2 ||w||^2
  int max_iter = 5000;
  double tol = 1e-6;
  StepRule step{};
};

struct FitInfo {
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;  ///< for hinge: norm of the subgradient at the returned point
  double objective = 0.0;
  std::vector<double> objective_trace;  ///< objective after each accepted iterate, starting at init
};

template <typename Model>
struct Fitted {
  Model model;
  FitInfo info;
};

// Objectives. X is n x d, y in {-1,+1} (binary) or 0..N-1 (multiclass).
double logistic_objective(const LinearClassifier& clf, MatrixView X, std::span<const int> y, double C);
std::vector<double> logistic_gradient(const LinearClassifier& clf, MatrixView X, std::span<const int> y, double C);
double hinge_objective(const LinearClassifier& clf, MatrixView X, std::span<const int> y, double C);
double softmax_objective(const MulticlassLinear& model, MatrixView X, std::span<const int> y, double C);
std::vector<double> softmax_gradient(const MulticlassLinear& model, MatrixView X, std::span<const int> y, double C);

/// minimize 1/2||w||^2 + C sum log(1 + exp(-y (w.x + b))).
/// Throws DegenerateLabels, DataError, DimensionError.
Fitted<LinearClassifier> train_logistic(MatrixView X, std::span<const int> y, const FitConfig& cfg);

/// minimize 1/2||w||^2 + C sum max(0, 1 - y (w.x + b)) by subgradient descent
/// with step eta/(t+1); returns the best iterate seen. Stops when the best
/// objective improves by less than tol (relative) over a 100-iteration window.
Fitted<LinearClassifier> train_linear_svm(MatrixView X, std::span<const int> y, const FitConfig& cfg);

/// minimize 1/2 sum_c ||w_c||^2 + C sum cross-entropy; labels 0..N-1 with
/// N = max label + 1, each present. Biases are centred to sum zero.
Fitted<MulticlassLinear> train_softmax(MatrixView X, std::span<const int> y, const FitConfig& cfg,
                                       std::size_t num_classes = 0);

/// w.x + b. Throws DimensionError.
double decision(const LinearClassifier& clf, std::span<const double> x);

/// Argmax over one-vs-all scores, lowest index on ties. Throws DimensionError
/// on mismatched dims or fewer than two classifiers.
std::size_t predict_ova(std::span<const LinearClassifier> clfs, std::span<const double> x);

struct PrototypePair {
  std::vector<double> positive;
  std::vector<double> negative;

  std::vector<double> flatten() const;
  friend bool operator==(const PrototypePair&, const PrototypePair&) = default;
};

/// Row means of each side. Throws EmptyClass, DimensionError.
PrototypePair compute_prototypes(MatrixView X_pos, MatrixView X_neg);

/// Mean of the rows of X.
std::vector<double> row_mean(MatrixView X);

// "CLSF" files: 16-byte header (magic, u32 d, u32 n_classes, u32 kind), then
// n_classes x (d + 1) little-endian f32 in flattened order.
enum class ClassifierKind : std::uint32_t { binary = 0, multiclass = 1, one_vs_all = 2 };

struct StoredClassifiers {
  ClassifierKind kind = ClassifierKind::binary;
  std::size_t dim = 0;
  std::size_t num_classes = 1;
  std::vector<double> flat;
};

StoredClassifiers to_stored(const LinearClassifier& clf);
StoredClassifiers to_stored(const MulticlassLinear& model);
StoredClassifiers to_stored(std::span<const LinearClassifier> bank);
void save_classifiers(const StoredClassifiers& stored, const std::filesystem::path& path);
StoredClassifiers load_classifiers(const std::filesystem::path& path);

}  // namespace metafunc
