#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metafunc/error.hpp"

namespace metafunc::cli {

namespace {

using nlohmann::json;

/// Reads keys from one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), ErrorCode::ConfigError, "'" + where_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigError, "'" + where_ + "." + key + "': " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    T v{};
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    seen_.erase(key);
    get(key, v);
    out = v;
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return std::nullopt;
    return Section(*it, where_ + "." + key);
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.contains(it.key()), ErrorCode::ConfigError,
              "unknown key '" + it.key() + "' in '" + where_ + "'");
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

DistributionSpec parse_distribution(const json& j, const std::string& where, std::uint64_t default_seed) {
  Section s(j, where);
  DistributionSpec d;
  d.seed = default_seed;
  std::string kind = "blobs";
  s.get("kind", kind);
  d.kind = parse_shape(kind);
  s.get("num_classes", d.num_classes);
  s.get("samples_per_class", d.samples_per_class);
  s.get("dim", d.dim);
  s.get("noise_sigma", d.noise_sigma);
  s.get("separation", d.separation);
  s.get("seed", d.seed);
  s.get("offset", d.offset);
  s.get("lift_seed", d.lift_seed);
  s.finish();
  return d;
}

}  // namespace

ShapeKind parse_shape(const std::string& name) {
  if (name == "blobs") return ShapeKind::blobs;
  if (name == "moons") return ShapeKind::moons;
  if (name == "circles") return ShapeKind::circles;
  if (name == "strips") return ShapeKind::strips;
  fail(ErrorCode::ConfigError, "unknown distribution kind '" + name + "'");
}

BaseClassifier parse_classifier(const std::string& name) {
  if (name == "logistic" || name == "lr") return BaseClassifier::logistic;
  if (name == "svm") return BaseClassifier::svm;
  if (name == "softmax") return BaseClassifier::softmax;
  fail(ErrorCode::ConfigError, "unknown classifier '" + name + "'");
}

RunConfig parse_run_config(const std::string& text, std::optional<std::uint64_t> seed_override) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigError, std::string("invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(doc, "config");
  root.get("seed", cfg.seed);
  if (seed_override) cfg.seed = *seed_override;
  root.get("workers", cfg.workers);

  if (auto p = root.child("paths")) {
    p->get("embeddings", cfg.paths.embeddings);
    p->get("novel", cfg.paths.novel);
    p->get("fset", cfg.paths.fset);
    p->get("model", cfg.paths.model);
    p->get("out", cfg.paths.out);
    p->get("novel_out", cfg.paths.novel_out);
    p->finish();
  }

  if (auto g = root.child("gen")) {
    if (const json* d = g->raw("distributions")) {
      // A single object or an array of them.
      if (d->is_array()) {
        for (std::size_t i = 0; i < d->size(); ++i)
          cfg.gen.distributions.push_back(parse_distribution(
              (*d)[i], "gen.distributions[" + std::to_string(i) + "]", derive_key(cfg.seed, {i})));
      } else {
        cfg.gen.distributions.push_back(parse_distribution(*d, "gen.distributions", cfg.seed));
      }
    }
    g->get("csv", cfg.gen.csv);
    g->get("lift_dim", cfg.gen.lift_dim);
    g->get("lift_seed", cfg.gen.lift_seed);
    g->get("novel_classes", cfg.gen.novel_classes);
    g->finish();
  }

  if (auto s = root.child("sampler")) {
    auto& c = cfg.sampler;
    s->get("many_shot_repeats", c.many_shot_repeats);
    s->get("few_shot_repeats", c.few_shot_repeats);
    s->get("shot", c.shot);
    s->get("negative_multipliers", c.negative_multipliers);
    s->get("hyper_set", c.hyper_set);
    s->get("many_shot_negative_factor", c.many_shot_negative_factor);
    s->get("n_way", c.n_way);
    s->get("outer_loops", c.outer_loops);
    s->get("many_shot_C", c.many_shot_C);
    std::string clf = "logistic";
    s->get("classifier", clf);
    c.classifier = parse_classifier(clf);
    s->finish();
  }

  if (auto v = root.child("variant")) {
    std::string kind = "vanilla";
    v->get("kind", kind);
    cfg.variant.kind = parse_mfl_kind(kind);
    v->get("depth", cfg.variant.depth);
    require(cfg.variant.depth >= 1, ErrorCode::ConfigError, "variant.depth must be at least 1");
    v->finish();
  }

  if (auto t = root.child("train")) {
    auto& c = cfg.train;
    t->get("epochs", c.epochs);
    t->get("batch_size", c.batch_size);
    t->get("lr", c.lr);
    t->get("lr_decay_epoch", c.lr_decay_epoch);
    t->get("lr_after", c.lr_after);
    t->get("momentum", c.momentum);
    t->get("val_fraction", c.val_fraction);
    t->get("hidden", c.hidden);
    t->get("select_best", c.select_best);
    t->finish();
  }

  if (auto e = root.child("episodes")) {
    auto& c = cfg.episodes;
    e->get("n_way", c.n_way);
    e->get("k_shot", c.k_shot);
    e->get("queries_per_class", c.queries_per_class);
    e->get("n_episodes", c.n_episodes);
    std::string clf = "logistic";
    e->get("classifier", clf);
    c.classifier = parse_classifier(clf);
    e->get("C_values", c.arm.C_values);
    e->get("ensemble", cfg.ensemble);
    e->finish();
  }

  if (auto b = root.child("boundary")) {
    auto& c = cfg.boundary;
    b->get("classes", c.classes);
    b->get("shots", c.shots);
    std::array<double, 4> bounds{c.bounds.x0, c.bounds.x1, c.bounds.y0, c.bounds.y1};
    b->get("bounds", bounds);
    c.bounds = {bounds[0], bounds[1], bounds[2], bounds[3]};
    b->get("resolution", c.resolution);
    b->get("ppm", c.ppm);
    b->finish();
  }

  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), seed_override);
}

}  // namespace metafunc::cli
