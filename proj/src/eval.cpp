#include "metafunc/eval.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include "json.hpp"
#include <sstream>

#include "metafunc/binary_io.hpp"
#include "metafunc/error.hpp"
#include "metafunc/parallel.hpp"
#include "metafunc/rng.hpp"

namespace metafunc {

namespace {

constexpr std::uint64_t kEpisodeStream = 0x45504953;
constexpr std::uint64_t kPerClassStream = 0x50434c53;

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view classifier_name(BaseClassifier c) {
  switch (c) {
    case BaseClassifier::logistic: return "logistic";
    case BaseClassifier::svm: return "svm";
    case BaseClassifier::softmax: return "softmax";
  }
  return "?";
}

Matrix gather(const EmbeddingSet& set, std::span<const std::size_t> idx) {
  Matrix m(idx.size(), set.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = set.row(idx[i]);
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

LinearClassifier fit_binary(MatrixView X, std::span<const int> y, BaseClassifier kind, FitConfig fit, double C) {
  fit.C = C;
  if (kind == BaseClassifier::svm) return train_linear_svm(X, y, fit).model;
  return train_logistic(X, y, fit).model;
}

void validate_arm(const EvalArm& arm, std::size_t expected_len, std::size_t dim) {
  require(!arm.C_values.empty(), ErrorCode::ConfigError, "arm '" + arm.name + "' has no C values");
  for (double c : arm.C_values) require(c > 0.0, ErrorCode::ConfigError, "C values must be positive");
  if (!arm.model) return;
  require(arm.model->dims().classifier_len == expected_len && arm.model->dims().dim == dim,
          ErrorCode::DimensionError,
          "model for arm '" + arm.name + "' expects classifier length " +
              std::to_string(arm.model->dims().classifier_len) + ", episodes produce " + std::to_string(expected_len));
}

void validate_episode_cfg(const EmbeddingSet& novel, const EpisodeConfig& cfg) {
  require(cfg.n_way >= 2, ErrorCode::ConfigError, "n_way must be at least 2");
  require(cfg.k_shot >= 1 && cfg.queries_per_class >= 1 && cfg.n_episodes >= 1, ErrorCode::ConfigError,
          "k_shot, queries_per_class and n_episodes must be at least 1");
  require(cfg.n_way <= novel.num_classes(), ErrorCode::ConfigError,
          "n_way " + std::to_string(cfg.n_way) + " exceeds the " + std::to_string(novel.num_classes()) +
              " available classes");
  require(std::size_t{cfg.k_shot} + cfg.queries_per_class <= novel.smallest_class_size(), ErrorCode::ConfigError,
          "k_shot + queries_per_class exceeds the smallest class size");
}

/// Averages (optionally transformed) flattened classifiers in C order.
std::vector<double> combine(const EvalArm& arm, const std::map<double, std::vector<double>>& fits,
                            std::span<const double> f_p) {
  std::vector<double> sum;
  for (double C : arm.C_values) {
    const auto& flat = fits.at(C);
    std::vector<double> out = arm.model ? arm.model->apply(flat, f_p) : flat;
    if (sum.empty()) sum.assign(out.size(), 0.0);
    for (std::size_t j = 0; j < out.size(); ++j) sum[j] += out[j];
  }
  const double inv = 1.0 / static_cast<double>(arm.C_values.size());
  for (double& v : sum) v *= inv;
  return sum;
}

std::vector<double> episode_accuracies(const EmbeddingSet& novel, const EpisodeConfig& cfg,
                                       std::span<const EvalArm> arms, const std::vector<double>& all_C,
                                       const Episode& ep) {
  const std::size_t n = cfg.n_way;
  const std::size_t k = cfg.k_shot;
  const std::size_t q = cfg.queries_per_class;
  const std::size_t d = novel.dim();
  const Matrix S = gather(novel, ep.support);
  const Matrix Q = gather(novel, ep.query);
  std::vector<double> acc(arms.size(), 0.0);
  const double total = static_cast<double>(n * q);

  if (cfg.classifier == BaseClassifier::softmax) {
    std::vector<int> y(n * k);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i / k);
    std::map<double, std::vector<double>> fits;
    for (double C : all_C) {
      FitConfig fit = cfg.fit;
      fit.C = C;
      fits[C] = train_softmax(S, y, fit, n).model.flatten();
    }
    std::vector<double> f_p;
    f_p.reserve(n * d);
    for (std::size_t c = 0; c < n; ++c) {
      const auto mean = row_mean(MatrixView{S.data.data() + c * k * d, k, d});
      f_p.insert(f_p.end(), mean.begin(), mean.end());
    }
    for (std::size_t a = 0; a < arms.size(); ++a) {
      const auto model = MulticlassLinear::unflatten(combine(arms[a], fits, f_p), n);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n * q; ++i)
        if (model.predict(Q.row(i)) == i / q) ++correct;
      acc[a] = static_cast<double>(correct) / total;
    }
    return acc;
  }

  // One-vs-rest: per class, its supports against every other support.
  std::vector<std::map<double, std::vector<double>>> fits(n);
  std::vector<std::vector<double>> protos(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<int> y(n * k, -1);
    for (std::size_t i = c * k; i < (c + 1) * k; ++i) y[i] = 1;
    for (double C : all_C) fits[c][C] = fit_binary(S, y, cfg.classifier, cfg.fit, C).flatten();
    Matrix pos(k, d);
    Matrix neg((n - 1) * k, d);
    for (std::size_t i = 0, p = 0, m = 0; i < n * k; ++i) {
      const auto r = S.row(i);
      std::copy(r.begin(), r.end(), (y[i] > 0 ? pos.row(p++) : neg.row(m++)).begin());
    }
    protos[c] = compute_prototypes(pos, neg).flatten();
  }
  for (std::size_t a = 0; a < arms.size(); ++a) {
    std::vector<LinearClassifier> clfs;
    clfs.reserve(n);
    for (std::size_t c = 0; c < n; ++c) clfs.push_back(LinearClassifier::unflatten(combine(arms[a], fits[c], protos[c])));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n * q; ++i)
      if (predict_ova(clfs, Q.row(i)) == i / q) ++correct;
    acc[a] = static_cast<double>(correct) / total;
  }
  return acc;
}

std::vector<double> unique_C(std::span<const EvalArm> arms) {
  std::vector<double> all;
  for (const auto& a : arms) all.insert(all.end(), a.C_values.begin(), a.C_values.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

nlohmann::ordered_json config_json(const EpisodeConfig& cfg, const EvalArm& arm) {
  nlohmann::ordered_json j;
  j["n_way"] = cfg.n_way;
  j["k_shot"] = cfg.k_shot;
  j["queries_per_class"] = cfg.queries_per_class;
  j["n_episodes"] = cfg.n_episodes;
  j["classifier"] = classifier_name(cfg.classifier);
  j["C_values"] = arm.C_values;
  if (arm.model) {
    j["transform"] = {{"variant", to_string(arm.model->variant().kind)}, {"depth", arm.model->variant().depth}};
  } else {
    j["transform"] = "none";
  }
  j["seed"] = cfg.seed;
  return j;
}

nlohmann::ordered_json to_json(const AccuracyReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["mean"] = r.mean;
  j["ci95"] = r.ci95;
  j["config"] = config_json(r.config, r.config.arm);
  j["per_episode"] = r.per_episode;
  return j;
}

}  // namespace

Episode sample_episode(const EmbeddingSet& novel, const EpisodeConfig& cfg, std::uint64_t index) {
  validate_episode_cfg(novel, cfg);
  Rng rng(cfg.seed, {kEpisodeStream, index});
  const auto ids = novel.class_ids();
  Episode ep;
  const std::size_t per = std::size_t{cfg.k_shot} + cfg.queries_per_class;
  for (std::size_t pick : rng.sample_without_replacement(ids.size(), cfg.n_way)) ep.classes.push_back(ids[pick]);
  for (std::uint32_t cls : ep.classes) {
    const auto members = novel.indices_of(cls);
    const auto chosen = rng.sample_without_replacement(members.size(), per);
    for (std::size_t i = 0; i < cfg.k_shot; ++i) ep.support.push_back(members[chosen[i]]);
    for (std::size_t i = cfg.k_shot; i < per; ++i) ep.query.push_back(members[chosen[i]]);
  }
  return ep;
}

std::pair<double, double> mean_ci95(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double stdev = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * stdev / std::sqrt(n)};
}

std::vector<AccuracyReport> run_paired_eval(const EmbeddingSet& novel, const EpisodeConfig& cfg,
                                            std::span<const EvalArm> arms, unsigned workers) {
  validate_episode_cfg(novel, cfg);
  require(!arms.empty(), ErrorCode::ConfigError, "no evaluation arms");
  const std::size_t len = (cfg.classifier == BaseClassifier::softmax ? cfg.n_way : 1u) * (novel.dim() + 1);
  for (const auto& a : arms) validate_arm(a, len, novel.dim());
  const auto all_C = unique_C(arms);

  std::vector<std::vector<double>> per(cfg.n_episodes);
  parallel_for(cfg.n_episodes, workers, [&](std::size_t e) {
    per[e] = episode_accuracies(novel, cfg, arms, all_C, sample_episode(novel, cfg, e));
  });

  std::vector<AccuracyReport> reports(arms.size());
  for (std::size_t a = 0; a < arms.size(); ++a) {
    auto& r = reports[a];
    r.name = arms[a].name;
    r.config = cfg;
    r.config.arm = arms[a];
    r.per_episode.resize(cfg.n_episodes);
    for (std::size_t e = 0; e < cfg.n_episodes; ++e) r.per_episode[e] = per[e][a];
    std::tie(r.mean, r.ci95) = mean_ci95(r.per_episode);
  }
  return reports;
}

AccuracyReport run_fsl_eval(const EmbeddingSet& novel, const EpisodeConfig& cfg, unsigned workers) {
  return run_paired_eval(novel, cfg, std::span<const EvalArm>(&cfg.arm, 1), workers).front();
}

PairedDelta paired_delta(const AccuracyReport& a, const AccuracyReport& b) {
  require(a.per_episode.size() == b.per_episode.size(), ErrorCode::ConfigError,
          "paired reports differ in episode count");
  PairedDelta d;
  d.per_episode.resize(a.per_episode.size());
  for (std::size_t e = 0; e < a.per_episode.size(); ++e) d.per_episode[e] = b.per_episode[e] - a.per_episode[e];
  std::tie(d.mean, d.ci95) = mean_ci95(d.per_episode);
  return d;
}

CrossDomainResult run_cross_domain_eval(const EmbeddingSet& train_base, const EmbeddingSet& novel_other,
                                        const SamplerConfig& sampler_cfg, std::uint64_t sampler_seed,
                                        const MflVariant& variant, const MflTrainConfig& train_cfg,
                                        const EpisodeConfig& episode_cfg, unsigned workers) {
  require(train_base.dim() == novel_other.dim(), ErrorCode::DimensionError,
          "source dim " + std::to_string(train_base.dim()) + " differs from target dim " +
              std::to_string(novel_other.dim()));
  validate_episode_cfg(novel_other, episode_cfg);
  TrainResult trained;
  if (sampler_cfg.n_way >= 2) {
    trained = train_mfl_multiclass(train_base, sampler_cfg, sampler_seed, variant, train_cfg, workers);
  } else {
    const auto fset = sample_binary_functional_set(train_base, sampler_cfg, sampler_seed, workers);
    trained = train_mfl(fset, variant, train_cfg);
  }
  CrossDomainResult out;
  out.model = std::make_shared<const MflModel>(std::move(trained.model));
  out.history = std::move(trained.history);
  const std::vector<EvalArm> arms{{"vanilla", nullptr, episode_cfg.arm.C_values},
                                  {"transformed", out.model, episode_cfg.arm.C_values}};
  auto reports = run_paired_eval(novel_other, episode_cfg, arms, workers);
  out.vanilla = std::move(reports[0]);
  out.transformed = std::move(reports[1]);
  return out;
}

std::vector<ClassImprovement> per_class_improvement(const EmbeddingSet& novel, const EvalArm& arm,
                                                    const EpisodeConfig& cfg, unsigned workers) {
  require(cfg.classifier != BaseClassifier::softmax, ErrorCode::ConfigError,
          "per-class improvement uses binary classifiers");
  require(novel.num_classes() >= 2, ErrorCode::ConfigError, "per-class improvement needs at least 2 classes");
  require(cfg.k_shot >= 1 && cfg.queries_per_class >= 1 && cfg.n_episodes >= 1, ErrorCode::ConfigError,
          "k_shot, queries_per_class and n_episodes must be at least 1");
  require(std::size_t{cfg.k_shot} + cfg.queries_per_class <= novel.smallest_class_size(), ErrorCode::ConfigError,
          "k_shot + queries_per_class exceeds the smallest class size");
  const std::size_t d = novel.dim();
  const EvalArm baseline{"vanilla", nullptr, arm.C_values};
  validate_arm(baseline, d + 1, d);
  validate_arm(arm, d + 1, d);
  const std::vector<EvalArm> arms{baseline, arm};
  const auto all_C = unique_C(arms);
  const auto ids = novel.class_ids();
  const std::size_t k = cfg.k_shot;
  const std::size_t q = cfg.queries_per_class;
  EpisodeConfig two_way = cfg;
  two_way.n_way = 2;

  std::vector<ClassImprovement> rows(ids.size());
  std::vector<std::array<double, 2>> acc(ids.size() * cfg.n_episodes);
  parallel_for(acc.size(), workers, [&](std::size_t job) {
    const std::size_t ci = job / cfg.n_episodes;
    const std::size_t e = job % cfg.n_episodes;
    Rng rng(cfg.seed, {kPerClassStream, ids[ci], e});
    std::size_t other = rng.below(ids.size() - 1);
    if (other >= ci) ++other;
    const auto pos_members = novel.indices_of(ids[ci]);
    const auto neg_members = novel.indices_of(ids[other]);
    const auto pos_pick = rng.sample_without_replacement(pos_members.size(), k + q);
    const auto neg_pick = rng.sample_without_replacement(neg_members.size(), k + q);

    // Scored as an ordinary 2-way episode so a shared bias shift from the
    // functional cancels in the one-vs-rest argmax.
    Episode ep;
    ep.classes = {ids[ci], ids[other]};
    for (std::size_t i = 0; i < k; ++i) ep.support.push_back(pos_members[pos_pick[i]]);
    for (std::size_t i = 0; i < k; ++i) ep.support.push_back(neg_members[neg_pick[i]]);
    for (std::size_t i = 0; i < q; ++i) ep.query.push_back(pos_members[pos_pick[k + i]]);
    for (std::size_t i = 0; i < q; ++i) ep.query.push_back(neg_members[neg_pick[k + i]]);
    const auto a = episode_accuracies(novel, two_way, arms, all_C, ep);
    acc[job] = {a[0], a[1]};
  });

  for (std::size_t ci = 0; ci < ids.size(); ++ci) {
    double v = 0.0, t = 0.0;
    for (std::size_t e = 0; e < cfg.n_episodes; ++e) {
      v += acc[ci * cfg.n_episodes + e][0];
      t += acc[ci * cfg.n_episodes + e][1];
    }
    rows[ci].positive_class = ids[ci];
    rows[ci].vanilla = v / cfg.n_episodes;
    rows[ci].transformed = t / cfg.n_episodes;
    rows[ci].delta = rows[ci].transformed - rows[ci].vanilla;
  }
  return rows;
}

BoundaryGrid decision_boundary_grid(const LinearClassifier& clf, const GridBounds& bounds, std::size_t resolution) {
  require(clf.dim() == 2, ErrorCode::DimensionError, "decision boundary grids need 2D classifiers");
  require(resolution >= 2, ErrorCode::ConfigError, "grid resolution must be at least 2");
  require(bounds.x1 > bounds.x0 && bounds.y1 > bounds.y0, ErrorCode::ConfigError, "empty grid bounds");
  BoundaryGrid g;
  g.resolution = resolution;
  g.bounds = bounds;
  const double step = 1.0 / static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < resolution; ++i) {
    g.xs.push_back(bounds.x0 + (bounds.x1 - bounds.x0) * static_cast<double>(i) * step);
    g.ys.push_back(bounds.y0 + (bounds.y1 - bounds.y0) * static_cast<double>(i) * step);
  }
  g.scores.resize(resolution * resolution);
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c) {
      const double p[2] = {g.xs[c], g.ys[r]};
      g.scores[r * resolution + c] = decision(clf, p);
    }
  return g;
}

std::string boundary_csv(const BoundaryGrid& grid) {
  std::string out = "x,y,score\n";
  for (std::size_t r = 0; r < grid.resolution; ++r)
    for (std::size_t c = 0; c < grid.resolution; ++c) {
      out += shortest(grid.xs[c]);
      out += ',';
      out += shortest(grid.ys[r]);
      out += ',';
      out += shortest(grid.scores[r * grid.resolution + c]);
      out += '\n';
    }
  return out;
}

std::vector<std::uint8_t> boundary_ppm(const BoundaryGrid& grid) {
  const std::size_t n = grid.resolution;
  const std::string header = "P6\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  double peak = 0.0;
  for (double s : grid.scores) peak = std::max(peak, std::abs(s));
  if (peak == 0.0) peak = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = n - 1 - i;
    for (std::size_t c = 0; c < n; ++c) {
      const double s = grid.scores[r * n + c];
      const auto shade = static_cast<std::uint8_t>(255.0 - 191.0 * std::min(1.0, std::abs(s) / peak));
      if (s > 0.0) {
        out.insert(out.end(), {shade, shade, 255});
      } else {
        out.insert(out.end(), {255, shade, shade});
      }
    }
  }
  return out;
}

std::string report_json(const AccuracyReport& report) { return to_json(report).dump(2) + "\n"; }

std::string reports_json(std::span<const AccuracyReport> reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

std::string reports_csv(std::span<const AccuracyReport> reports) {
  std::string out = "name,n_way,k_shot,queries_per_class,n_episodes,classifier,mean,ci95\n";
  for (const auto& r : reports) {
    out += r.name + ',' + std::to_string(r.config.n_way) + ',' + std::to_string(r.config.k_shot) + ',' +
           std::to_string(r.config.queries_per_class) + ',' + std::to_string(r.config.n_episodes) + ',' +
           std::string(classifier_name(r.config.classifier)) + ',' + shortest(r.mean) + ',' + shortest(r.ci95) + '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  io::ensure_parent(path);
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  require(static_cast<bool>(f), ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace metafunc
