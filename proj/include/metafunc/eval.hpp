#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "metafunc/classifiers.hpp"
#include "metafunc/embeddings.hpp"
#include "metafunc/episodes.hpp"
#include "metafunc/functional.hpp"

namespace metafunc {

/// How episode classifiers are produced: one fit per C value, each passed
/// through the model (if any), then averaged with equal weights. A single C
/// and no model is the plain baseline.
struct EvalArm {
  std::string name = "vanilla";
  std::shared_ptr<const MflModel> model;
  std::vector<double> C_values{1.0};
};

struct EpisodeConfig {
  std::uint32_t n_way = 5;
  std::uint32_t k_shot = 1;
  std::uint32_t queries_per_class = 15;
  std::uint32_t n_episodes = 600;
  /// logistic/svm: one-vs-rest binary classifiers; softmax: one multi-class fit.
  BaseClassifier classifier = BaseClassifier::logistic;
  FitConfig fit{};
  std::uint64_t seed = 0;
  EvalArm arm{};
};

struct Episode {
  std::vector<std::uint32_t> classes;  ///< sampled order defines local labels
  std::vector<std::size_t> support;    ///< k_shot per class, class-major
  std::vector<std::size_t> query;      ///< queries_per_class per class, class-major
};

/// Episode `index` of the stream for `seed`; depends only on (seed, index,
/// n_way, k_shot, queries_per_class).
Episode sample_episode(const EmbeddingSet& novel, const EpisodeConfig& cfg, std::uint64_t index);

struct AccuracyReport {
  std::string name;
  std::vector<double> per_episode;
  double mean = 0.0;
  double ci95 = 0.0;
  EpisodeConfig config;
};

/// mean and 1.96 * sample stdev / sqrt(n) of `values`.
std::pair<double, double> mean_ci95(std::span<const double> values);

/// Throws ConfigError when cfg is infeasible for `novel`.
AccuracyReport run_fsl_eval(const EmbeddingSet& novel, const EpisodeConfig& cfg, unsigned workers = 1);

/// Evaluates every arm on the same episode stream (cfg.arm is ignored).
/// Classifier fits are shared between arms that use the same C.
std::vector<AccuracyReport> run_paired_eval(const EmbeddingSet& novel, const EpisodeConfig& cfg,
                                            std::span<const EvalArm> arms, unsigned workers = 1);

struct PairedDelta {
  std::vector<double> per_episode;  ///< b - a
  double mean = 0.0;
  double ci95 = 0.0;

  bool excludes_zero() const noexcept { return mean - ci95 > 0.0 || mean + ci95 < 0.0; }
};

/// Per-episode differences b - a. Throws ConfigError if the reports differ in length.
PairedDelta paired_delta(const AccuracyReport& a, const AccuracyReport& b);

struct CrossDomainResult {
  AccuracyReport vanilla;
  AccuracyReport transformed;
  std::shared_ptr<const MflModel> model;
  TrainHistory history;
};

/// Trains the functional on `train_base` only, then evaluates baseline and
/// transformed classifiers on identical episodes drawn from `novel_other`.
CrossDomainResult run_cross_domain_eval(const EmbeddingSet& train_base, const EmbeddingSet& novel_other,
                                        const SamplerConfig& sampler_cfg, std::uint64_t sampler_seed,
                                        const MflVariant& variant, const MflTrainConfig& train_cfg,
                                        const EpisodeConfig& episode_cfg, unsigned workers = 1);

struct ClassImprovement {
  std::uint32_t positive_class = 0;
  double vanilla = 0.0;
  double transformed = 0.0;
  double delta = 0.0;
};

/// 2-way episodes per novel class, pairing it with another class drawn per
/// episode and scored like run_paired_eval; cfg.n_episodes episodes per
/// class. `arm` supplies the model and C values.
std::vector<ClassImprovement> per_class_improvement(const EmbeddingSet& novel, const EvalArm& arm,
                                                    const EpisodeConfig& cfg, unsigned workers = 1);

struct GridBounds {
  double x0 = -1.0;
  double x1 = 1.0;
  double y0 = -1.0;
  double y1 = 1.0;
};

/// scores[r * resolution + c] is the decision value at (x_c, y_r).
struct BoundaryGrid {
  std::size_t resolution = 0;
  GridBounds bounds;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> scores;
};

/// Throws DimensionError unless clf.dim() == 2, ConfigError if resolution < 2.
BoundaryGrid decision_boundary_grid(const LinearClassifier& clf, const GridBounds& bounds, std::size_t resolution);
/// "x,y,score" rows in grid order.
std::string boundary_csv(const BoundaryGrid& grid);
/// Binary P6 image, top row = largest y; blue where score > 0, red otherwise.
std::vector<std::uint8_t> boundary_ppm(const BoundaryGrid& grid);

std::string report_json(const AccuracyReport& report);
std::string reports_json(std::span<const AccuracyReport> reports);
/// Header plus one summary row per report.
std::string reports_csv(std::span<const AccuracyReport> reports);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace metafunc
