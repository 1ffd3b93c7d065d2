#include <gtest/gtest.h>

#include <cmath>

#include "metafunc/classifiers.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace metafunc {
namespace {

using testing::code_of;
using testing::norm;
using testing::random_task;

TEST(Logistic, SymmetricPairHasZeroBias) {
  Matrix X(2, 1);
  X(0, 0) = 1.0;
  X(1, 0) = -1.0;
  const std::vector<int> y{1, -1};
  const auto fit = train_logistic(X, y, {});
  EXPECT_GT(fit.model.weights[0], 0.0);
  EXPECT_LE(std::abs(fit.model.bias), 1e-6);
  EXPECT_TRUE(fit.info.converged);
}

TEST(Logistic, MatchesIndependentGradientAndOracle) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto t = random_task(seed, 24, 3, 2);
    const auto fit = train_logistic(t.X, t.y, {});
    const auto p = fit.model.flatten();
    EXPECT_LE(norm(testing::oracle_logistic_gradient(t, p, 1.0)), 1e-6);
    EXPECT_NEAR(fit.info.objective, testing::oracle_logistic_objective(t, p, 1.0), 1e-9);
    // The library's own gradient agrees with the independent one.
    const auto g_lib = logistic_gradient(fit.model, t.X, t.y, 1.0);
    const auto g_ref = testing::oracle_logistic_gradient(t, p, 1.0);
    for (std::size_t j = 0; j < g_ref.size(); ++j) EXPECT_NEAR(g_lib[j], g_ref[j], 1e-10);
  }
}

TEST(Logistic, TinyCShrinksWeights) {
  const auto t = random_task(4, 30, 4, 2);
  FitConfig cfg;
  cfg.C = 1e-8;
  const auto fit = train_logistic(t.X, t.y, cfg);
  double w = 0;
  for (double v : fit.model.weights) w += v * v;
  EXPECT_LE(std::sqrt(w), 1e-3);
}

TEST(Logistic, BacktrackingObjectiveIsMonotone) {
  const auto t = random_task(5, 40, 3, 2);
  FitConfig cfg;
  cfg.step.kind = StepRule::Kind::backtracking;
  const auto fit = train_logistic(t.X, t.y, cfg);
  ASSERT_GE(fit.info.objective_trace.size(), 2u);
  for (std::size_t i = 1; i < fit.info.objective_trace.size(); ++i)
    EXPECT_LE(fit.info.objective_trace[i], fit.info.objective_trace[i - 1]);
  EXPECT_LE(fit.info.grad_norm, cfg.tol);
}

TEST(Logistic, NewtonAndGradientDescentAgree) {
  const auto t = random_task(6, 30, 2, 2);
  FitConfig gd;
  gd.step.kind = StepRule::Kind::backtracking;
  gd.max_iter = 200000;
  const auto a = train_logistic(t.X, t.y, {});
  const auto b = train_logistic(t.X, t.y, gd);
  EXPECT_NEAR(a.info.objective, b.info.objective, 1e-9 * (1 + std::abs(a.info.objective)));
}

TEST(Logistic, LabelFlipNegatesParameters) {
  auto t = random_task(7, 30, 3, 2);
  const auto a = train_logistic(t.X, t.y, {}).model;
  for (int& v : t.y) v = -v;
  const auto b = train_logistic(t.X, t.y, {}).model;
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.weights[j], -b.weights[j], 1e-6);
  EXPECT_NEAR(a.bias, -b.bias, 1e-6);
}

TEST(Logistic, Errors) {
  Matrix X(2, 1, 1.0);
  EXPECT_EQ(code_of([&] { train_logistic(X, std::vector<int>{1, 1}, {}); }), ErrorCode::DegenerateLabels);
  X(0, 0) = std::nan("");
  EXPECT_EQ(code_of([&] { train_logistic(X, std::vector<int>{1, -1}, {}); }), ErrorCode::DataError);
  EXPECT_EQ(code_of([&] { train_logistic(X, std::vector<int>{1}, {}); }), ErrorCode::DimensionError);
}

TEST(Svm, TwoPointMaxMargin) {
  Matrix X(2, 1);
  X(0, 0) = 1.0;
  X(1, 0) = -1.0;
  FitConfig cfg;
  cfg.C = 100.0;
  cfg.max_iter = 200000;
  const auto fit = train_linear_svm(X, std::vector<int>{1, -1}, cfg);
  EXPECT_NEAR(fit.model.weights[0], 1.0, 1e-2);
  EXPECT_NEAR(fit.model.bias, 0.0, 1e-2);
}

TEST(Svm, NeverWorseThanZero) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto t = random_task(seed, 20, 3, 2);
    const auto fit = train_linear_svm(t.X, t.y, {});
    LinearClassifier zero{std::vector<double>(3, 0.0), 0.0};
    EXPECT_LE(hinge_objective(fit.model, t.X, t.y, 1.0), hinge_objective(zero, t.X, t.y, 1.0));
  }
}

TEST(Svm, DegenerateLabels) {
  Matrix X(2, 1, 1.0);
  EXPECT_EQ(code_of([&] { train_linear_svm(X, std::vector<int>{-1, -1}, {}); }), ErrorCode::DegenerateLabels);
}

TEST(Softmax, OrthogonalPointsAreFit) {
  Matrix X(3, 3);
  for (std::size_t i = 0; i < 3; ++i) X(i, i) = 1.0;
  const std::vector<int> y{0, 1, 2};
  const auto fit = train_softmax(X, y, {});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(fit.model.predict(X.row(i)), i);
  EXPECT_LE(norm(testing::oracle_softmax_gradient({X, y, 3}, fit.model.flatten(), 1.0)), 1e-6);
}

TEST(Softmax, PermutingLabelsPermutesRows) {
  const auto t = random_task(8, 30, 2, 3);
  const auto a = train_softmax(t.X, t.y, {}).model;
  const int perm[3] = {2, 0, 1};
  std::vector<int> y2(t.y.size());
  for (std::size_t i = 0; i < y2.size(); ++i) y2[i] = perm[t.y[i]];
  const auto b = train_softmax(t.X, y2, {}).model;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto pc = static_cast<std::size_t>(perm[c]);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a.weights(c)[j], b.weights(pc)[j], 1e-6);
    EXPECT_NEAR(a.bias(c), b.bias(pc), 1e-6);
  }
}

TEST(Softmax, MissingClassIsDegenerate) {
  Matrix X(2, 1, 1.0);
  EXPECT_EQ(code_of([&] { train_softmax(X, std::vector<int>{0, 2}, {}); }), ErrorCode::DegenerateLabels);
}

TEST(Flatten, RoundTripsExactly) {
  const LinearClassifier c{{0.1, -2.5, 3e-7}, 0.3};
  EXPECT_EQ(LinearClassifier::unflatten(c.flatten()), c);
  EXPECT_EQ(c.flatten().back(), 0.3);
  const auto t = random_task(9, 12, 2, 3);
  const auto m = train_softmax(t.X, t.y, {}).model;
  EXPECT_EQ(MulticlassLinear::unflatten(m.flatten(), 3), m);
}

TEST(PredictOva, ScaleInvarianceTiesAndSignRule) {
  const std::vector<LinearClassifier> clfs{{{1.0, 0.0}, 0.0}, {{0.0, 1.0}, 0.5}, {{-1.0, -1.0}, 0.0}};
  std::vector<LinearClassifier> scaled = clfs;
  for (auto& c : scaled) {
    for (double& w : c.weights) w *= 3.7;
    c.bias *= 3.7;
  }
  Rng r(1);
  for (int i = 0; i < 100; ++i) {
    const double x[2] = {r.uniform(-2, 2), r.uniform(-2, 2)};
    EXPECT_EQ(predict_ova(clfs, x), predict_ova(scaled, x));
  }
  const std::vector<LinearClassifier> pair{{{2.0}, -1.0}, {{-2.0}, 1.0}};
  for (double x : {-1.0, 0.2, 0.7, 3.0}) EXPECT_EQ(predict_ova(pair, std::span<const double>(&x, 1)), x > 0.5 ? 0u : 1u);
  const std::vector<LinearClassifier> tied{{{1.0}, 0.0}, {{1.0}, 0.0}, {{1.0}, 0.0}};
  const double one = 1.0;
  EXPECT_EQ(predict_ova(tied, std::span<const double>(&one, 1)), 0u);
}

TEST(PredictOva, Errors) {
  const std::vector<LinearClassifier> one{{{1.0}, 0.0}};
  const double x = 1.0;
  EXPECT_EQ(code_of([&] { predict_ova(one, std::span<const double>(&x, 1)); }), ErrorCode::DimensionError);
  const std::vector<LinearClassifier> two{{{1.0}, 0.0}, {{1.0, 2.0}, 0.0}};
  EXPECT_EQ(code_of([&] { predict_ova(two, std::span<const double>(&x, 1)); }), ErrorCode::DimensionError);
  EXPECT_EQ(code_of([&] { decision(two[1], std::span<const double>(&x, 1)); }), ErrorCode::DimensionError);
}

TEST(Prototypes, Means) {
  Matrix pos(1, 2);
  pos(0, 0) = 3.0;
  pos(0, 1) = -1.0;
  Matrix neg(2, 2);
  neg(0, 0) = 1.0;
  neg(0, 1) = 2.0;
  neg(1, 0) = 4.0;
  neg(1, 1) = -5.0;
  const auto p = compute_prototypes(pos, neg);
  EXPECT_EQ(p.positive, (std::vector<double>{3.0, -1.0}));
  EXPECT_EQ(p.negative, (std::vector<double>{(1.0 + 4.0) / 2, (2.0 - 5.0) / 2}));
  EXPECT_EQ(p.flatten(), (std::vector<double>{3.0, -1.0, 2.5, -1.5}));
  EXPECT_EQ(code_of([&] { compute_prototypes(pos, Matrix(0, 2)); }), ErrorCode::EmptyClass);
}

TEST(Clsf, RoundTripAndHeader) {
  const auto dir = testing::scratch_dir();
  const std::vector<LinearClassifier> bank{{{1.5, -2.0}, 0.25}, {{0.5, 1.0}, -1.0}};
  save_classifiers(to_stored(bank), dir / "bank.clsf");
  const auto bytes = testing::read_file(dir / "bank.clsf");
  ASSERT_EQ(bytes.size(), 16u + 2 * 3 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "CLSF");
  const auto back = load_classifiers(dir / "bank.clsf");
  EXPECT_EQ(back.kind, ClassifierKind::one_vs_all);
  EXPECT_EQ(back.dim, 2u);
  EXPECT_EQ(back.num_classes, 2u);
  EXPECT_EQ(back.flat, (std::vector<double>{1.5, -2.0, 0.25, 0.5, 1.0, -1.0}));

  testing::write_file(dir / "short.clsf", bytes.substr(0, 20));
  EXPECT_EQ(code_of([&] { load_classifiers(dir / "short.clsf"); }), ErrorCode::FormatError);
}

}  // namespace
}  // namespace metafunc
