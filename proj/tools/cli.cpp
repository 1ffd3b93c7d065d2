#include "cli.hpp"

#include <cstdlib>
#include <iomanip>
#include <memory>
#include <optional>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "metafunc/binary_io.hpp"
#include "metafunc/embeddings.hpp"
#include "metafunc/episodes.hpp"
#include "metafunc/error.hpp"
#include "metafunc/eval.hpp"
#include "metafunc/functional.hpp"
#include "metafunc/rng.hpp"
#include "metafunc/simd/kernels.hpp"
#include "run_config.hpp"

namespace metafunc::cli {

namespace {

constexpr std::uint64_t kBoundaryStream = 0x424e4459;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out;
  // Subcommand-specific inputs; empty means "use the config value".
  std::string embeddings;
  std::string novel;
  std::string fset;
  std::string model;
  std::string novel_out;
  std::string history;
  std::string variant;
  std::optional<std::uint32_t> depth;
};

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::FormatError: return kIo;
    case ErrorCode::NumericalError: return kNumerical;
    default: return kConfig;
  }
}

void setup_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_logger_mt("metafunc");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("METAFUNC_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only accept it when asked for.
    if (level != spdlog::level::off || std::string_view(env) == "off") spdlog::set_level(level);
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_run_config("{}", c.seed) : load_run_config(c.config, c.seed);
  if (c.workers) cfg.workers = *c.workers;
  auto set = [](std::optional<std::string>& dst, const std::string& v) {
    if (!v.empty()) dst = v;
  };
  set(cfg.paths.out, c.out);
  set(cfg.paths.embeddings, c.embeddings);
  set(cfg.paths.novel, c.novel);
  set(cfg.paths.fset, c.fset);
  set(cfg.paths.model, c.model);
  set(cfg.paths.novel_out, c.novel_out);
  if (!c.variant.empty()) cfg.variant.kind = parse_mfl_kind(c.variant);
  if (c.depth) cfg.variant.depth = *c.depth;
  require(cfg.variant.depth >= 1, ErrorCode::ConfigError, "depth must be at least 1");
  cfg.train.seed = cfg.seed;
  cfg.episodes.seed = cfg.seed;
  return cfg;
}

const std::string& need(const std::optional<std::string>& v, const char* what) {
  require(v.has_value(), ErrorCode::ConfigError, std::string("missing ") + what);
  return *v;
}

EmbeddingSet load_any(const std::string& path) {
  if (std::filesystem::path(path).extension() == ".csv") return load_embeddings_csv(path);
  return load_embeddings(path);
}

void save_any(const EmbeddingSet& set, const std::string& path) {
  if (std::filesystem::path(path).extension() == ".csv") {
    save_embeddings_csv(set, path);
  } else {
    save_embeddings(set, path);
  }
}

std::filesystem::path sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return p.parent_path() / (p.stem().string() + suffix);
}

int cmd_gen(const RunConfig& cfg, std::ostream& out) {
  const auto& dst = need(cfg.paths.out, "--out");
  EmbeddingSet set;
  if (cfg.gen.csv) {
    set = load_embeddings_csv(*cfg.gen.csv);
  } else {
    require(!cfg.gen.distributions.empty(), ErrorCode::ConfigError, "gen needs distributions or a csv path");
    set = generate_mixture(cfg.gen.distributions);
  }
  if (cfg.gen.lift_dim) set = lift_dimension(set, *cfg.gen.lift_dim, cfg.gen.lift_seed.value_or(cfg.seed));

  if (cfg.gen.novel_classes.empty()) {
    save_any(set, dst);
    out << "wrote " << set.size() << " records, " << set.num_classes() << " classes, d=" << set.dim() << " to "
        << dst << "\n";
    return kOk;
  }
  const auto& novel_dst = need(cfg.paths.novel_out, "--novel-out for a class split");
  std::vector<std::uint32_t> base_ids;
  for (auto id : set.class_ids())
    if (std::find(cfg.gen.novel_classes.begin(), cfg.gen.novel_classes.end(), id) == cfg.gen.novel_classes.end())
      base_ids.push_back(id);
  const auto [base, novel] = split_classes(set, base_ids, cfg.gen.novel_classes);
  save_any(base, dst);
  save_any(novel, novel_dst);
  out << "wrote base " << base.num_classes() << " classes to " << dst << ", novel " << novel.num_classes()
      << " classes to " << novel_dst << ", d=" << set.dim() << "\n";
  return kOk;
}

FunctionalSet sample_all(const EmbeddingSet& base, const RunConfig& cfg) {
  if (cfg.sampler.n_way <= 1) return sample_binary_functional_set(base, cfg.sampler, cfg.seed, cfg.workers);
  FunctionalSet all;
  for (std::uint32_t i = 0; i < cfg.sampler.outer_loops; ++i) {
    auto pass = sample_multiclass_functional_set(base, cfg.sampler, cfg.seed, i, cfg.workers);
    if (i == 0) {
      all = std::move(pass);
    } else {
      std::move(pass.tuples.begin(), pass.tuples.end(), std::back_inserter(all.tuples));
    }
  }
  return all;
}

int cmd_sample(const RunConfig& cfg, std::ostream& out) {
  const auto base = load_any(need(cfg.paths.embeddings, "--embeddings"));
  const auto& dst = need(cfg.paths.out, "--out");
  const auto fset = sample_all(base, cfg);
  save_functional_set(fset, dst);
  const auto expected = cfg.sampler.n_way <= 1 ? tuples_per_pass(cfg.sampler, base.num_classes())
                                               : total_tuples(cfg.sampler, base.num_classes());
  out << "tuples: " << fset.size() << " (expected " << expected << ")\n";
  return kOk;
}

void print_epoch(std::ostream& out, const EpochStats& s) {
  out << "epoch " << s.epoch << " lr=" << s.lr << " train_mse=" << std::setprecision(10) << s.train_mse
      << " val_mse=" << s.val_mse << std::setprecision(6) << "\n";
}

std::string history_json(const TrainHistory& h) {
  nlohmann::ordered_json j;
  j["train_size"] = h.train_size;
  j["val_size"] = h.val_size;
  j["identity_train_mse"] = h.identity_train_mse;
  j["identity_val_mse"] = h.identity_val_mse;
  j["best_epoch"] = h.best_epoch;
  j["block_train_mse"] = h.block_train_mse;
  auto& epochs = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}});
  return j.dump(2) + "\n";
}

int cmd_train(const RunConfig& cfg, const std::string& history_path, std::ostream& out) {
  const auto& dst = need(cfg.paths.out, "--out");
  const auto on_epoch = [&](const EpochStats& s) { print_epoch(out, s); };
  TrainResult result;
  if (cfg.paths.fset) {
    const auto fset = load_functional_set(*cfg.paths.fset);
    result = train_mfl(fset, cfg.variant, cfg.train, nullptr, on_epoch);
  } else {
    const auto base = load_any(need(cfg.paths.embeddings, "--fset or --embeddings"));
    if (cfg.sampler.n_way >= 2) {
      result = train_mfl_multiclass(base, cfg.sampler, cfg.seed, cfg.variant, cfg.train, cfg.workers, on_epoch);
    } else {
      const auto fset = sample_binary_functional_set(base, cfg.sampler, cfg.seed, cfg.workers);
      result = train_mfl(fset, cfg.variant, cfg.train, nullptr, on_epoch);
    }
  }
  const auto& h = result.history;
  out << "identity_train_mse=" << std::setprecision(10) << h.identity_train_mse
      << " identity_val_mse=" << h.identity_val_mse << " best_epoch=" << h.best_epoch
      << " best_val_mse=" << h.epochs.at(h.best_epoch).val_mse << std::setprecision(6) << "\n";
  save_model(result.model, dst);
  if (!history_path.empty()) write_text(history_path, history_json(h));
  return kOk;
}

std::vector<EvalArm> eval_arms(const RunConfig& cfg, std::shared_ptr<const MflModel> model) {
  const auto& Cs = cfg.episodes.arm.C_values;
  std::vector<EvalArm> arms{{"vanilla", nullptr, Cs}};
  if (model) arms.push_back({"transformed", model, Cs});
  if (cfg.ensemble && Cs.size() > 1) {
    for (double C : Cs) {
      std::ostringstream name;
      name << "C=" << C;
      arms.push_back({"vanilla " + name.str(), nullptr, {C}});
      if (model) arms.push_back({"transformed " + name.str(), model, {C}});
    }
  }
  return arms;
}

void write_reports(const std::vector<AccuracyReport>& reports, const std::string& dst, std::ostream& out) {
  write_text(dst, reports_json(reports));
  write_text(sibling(dst, ".csv"), reports_csv(reports));
  for (const auto& r : reports)
    out << r.name << ": mean=" << std::setprecision(6) << 100.0 * r.mean << "% ci95=" << 100.0 * r.ci95 << "%\n";
  if (reports.size() >= 2 && reports[1].name == "transformed") {
    const auto d = paired_delta(reports[0], reports[1]);
    out << "delta: mean=" << 100.0 * d.mean << "pp ci95=" << 100.0 * d.ci95 << "pp\n";
  }
}

std::shared_ptr<const MflModel> maybe_model(const RunConfig& cfg) {
  if (!cfg.paths.model) return nullptr;
  return std::make_shared<const MflModel>(load_model(*cfg.paths.model));
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const auto novel = load_any(need(cfg.paths.novel, "--novel"));
  const auto& dst = need(cfg.paths.out, "--out");
  const auto arms = eval_arms(cfg, maybe_model(cfg));
  write_reports(run_paired_eval(novel, cfg.episodes, arms, cfg.workers), dst, out);
  return kOk;
}

int cmd_xdomain(const RunConfig& cfg, std::ostream& out) {
  const auto base = load_any(need(cfg.paths.embeddings, "--embeddings"));
  const auto novel = load_any(need(cfg.paths.novel, "--novel"));
  const auto& dst = need(cfg.paths.out, "--out");
  auto r = run_cross_domain_eval(base, novel, cfg.sampler, cfg.seed, cfg.variant, cfg.train, cfg.episodes,
                                 cfg.workers);
  write_reports({r.vanilla, r.transformed}, dst, out);
  return kOk;
}

int cmd_perclass(const RunConfig& cfg, std::ostream& out) {
  const auto novel = load_any(need(cfg.paths.novel, "--novel"));
  const auto& dst = need(cfg.paths.out, "--out");
  const auto model = maybe_model(cfg);
  require(model != nullptr, ErrorCode::ConfigError, "perclass needs --model");
  const EvalArm arm{"transformed", model, cfg.episodes.arm.C_values};
  const auto rows = per_class_improvement(novel, arm, cfg.episodes, cfg.workers);
  std::ostringstream csv;
  csv << std::setprecision(17) << "class,vanilla,transformed,delta\n";
  std::size_t improved = 0;
  for (const auto& r : rows) {
    csv << r.positive_class << ',' << r.vanilla << ',' << r.transformed << ',' << r.delta << '\n';
    if (r.delta > 0.0) ++improved;
  }
  write_text(dst, csv.str());
  out << "classes improved: " << improved << " of " << rows.size() << "\n";
  return kOk;
}

int cmd_boundary(const RunConfig& cfg, std::ostream& out) {
  const auto set = load_any(need(cfg.paths.embeddings, "--embeddings"));
  const auto& dst = need(cfg.paths.out, "--out");
  const auto& b = cfg.boundary;
  std::vector<std::uint32_t> classes = b.classes;
  if (classes.empty()) {
    const auto ids = set.class_ids();
    require(ids.size() >= 2, ErrorCode::ConfigError, "boundary needs two classes");
    classes = {ids[0], ids[1]};
  }
  require(classes.size() == 2, ErrorCode::ConfigError, "boundary.classes must list exactly two classes");
  require(b.shots >= 1, ErrorCode::ConfigError, "boundary.shots must be at least 1");

  Rng rng(cfg.seed, {kBoundaryStream});
  const std::size_t d = set.dim();
  Matrix X(2 * b.shots, d), pos(b.shots, d), neg(b.shots, d);
  std::vector<int> y(2 * b.shots);
  for (std::size_t side = 0; side < 2; ++side) {
    const auto members = set.indices_of(classes[side]);
    require(members.size() >= b.shots, ErrorCode::ConfigError, "class has fewer records than boundary.shots");
    const auto pick = rng.sample_without_replacement(members.size(), b.shots);
    for (std::size_t i = 0; i < b.shots; ++i) {
      const auto r = set.row(members[pick[i]]);
      std::copy(r.begin(), r.end(), X.row(side * b.shots + i).begin());
      std::copy(r.begin(), r.end(), (side == 0 ? pos : neg).row(i).begin());
      y[side * b.shots + i] = side == 0 ? 1 : -1;
    }
  }
  FitConfig fit = cfg.episodes.fit;
  fit.C = cfg.episodes.arm.C_values.at(0);
  const auto clf = train_logistic(X, y, fit).model;

  auto emit = [&](const LinearClassifier& c, const std::filesystem::path& csv_path) {
    const auto grid = decision_boundary_grid(c, b.bounds, b.resolution);
    write_text(csv_path, boundary_csv(grid));
    if (b.ppm) {
      const auto img = boundary_ppm(grid);
      io::write_bytes(sibling(csv_path.string(), ".ppm"), img);
    }
    out << "wrote " << csv_path.string() << "\n";
  };
  emit(clf, dst);
  if (auto model = maybe_model(cfg)) {
    const auto f_p = compute_prototypes(pos, neg).flatten();
    emit(LinearClassifier::unflatten(model->apply(clf.flatten(), f_p)), sibling(dst, ".transformed.csv"));
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
  setup_logging();
  CLI::App app{"Learned functional regularisation for few-shot linear classifiers"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "JSON run configuration");
    sub->add_option("--seed", c.seed, "Override the config seed");
    sub->add_option("--workers", c.workers, "Worker threads");
    sub->add_option("--out", c.out, "Output path");
  };
  auto* gen = app.add_subcommand("gen", "Generate, import or lift embeddings");
  add_common(gen);
  gen->add_option("--novel-out", c.novel_out, "Novel split output when gen.novel_classes is set");
  auto* sample = app.add_subcommand("sample", "Sample a functional set");
  add_common(sample);
  sample->add_option("--embeddings", c.embeddings, "Base-class embeddings");
  auto* train = app.add_subcommand("train", "Train the functional");
  add_common(train);
  train->add_option("--fset", c.fset, "Functional set");
  train->add_option("--embeddings", c.embeddings, "Base embeddings (sample on the fly)");
  train->add_option("--history", c.history, "Write the training history as JSON");
  train->add_option("--variant", c.variant, "vanilla | with_prototypes | composite");
  train->add_option("--depth", c.depth, "Number of iterative-update blocks");
  auto* eval = app.add_subcommand("eval", "Episodic few-shot evaluation");
  add_common(eval);
  eval->add_option("--novel", c.novel, "Novel-class embeddings");
  eval->add_option("--model", c.model, "Trained functional");
  auto* xdomain = app.add_subcommand("xdomain", "Train on one domain, evaluate on another");
  add_common(xdomain);
  xdomain->add_option("--embeddings", c.embeddings, "Training-domain base embeddings");
  xdomain->add_option("--novel", c.novel, "Target-domain embeddings");
  xdomain->add_option("--variant", c.variant, "vanilla | with_prototypes | composite");
  xdomain->add_option("--depth", c.depth, "Number of iterative-update blocks");
  auto* perclass = app.add_subcommand("perclass", "Per-class 2-way improvement table");
  add_common(perclass);
  perclass->add_option("--novel", c.novel, "Novel-class embeddings");
  perclass->add_option("--model", c.model, "Trained functional");
  auto* boundary = app.add_subcommand("boundary", "Decision-boundary grids for 2D embeddings");
  add_common(boundary);
  boundary->add_option("--embeddings", c.embeddings, "2D embeddings");
  boundary->add_option("--model", c.model, "Trained functional");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, out);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const RunConfig cfg = resolve(c);
    spdlog::debug("simd kernels: {}", simd::name(simd::active().isa));
    if (gen->parsed()) return cmd_gen(cfg, out);
    if (sample->parsed()) return cmd_sample(cfg, out);
    if (train->parsed()) return cmd_train(cfg, c.history, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
    if (xdomain->parsed()) return cmd_xdomain(cfg, out);
    if (perclass->parsed()) return cmd_perclass(cfg, out);
    if (boundary->parsed()) return cmd_boundary(cfg, out);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kIo;
  }
  return kConfig;
}

}  // namespace metafunc::cli
