#include <gtest/gtest.h>

#include <cmath>
#include <regex>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "metafunc/episodes.hpp"
#include "metafunc/functional.hpp"
#include "test_util.hpp"

namespace metafunc {
namespace {

namespace fs = std::filesystem;
using testing::read_file;
using testing::write_file;

constexpr const char* kPipelineConfig = R"({
  "seed": 5,
  "gen": {
    "distributions": [{"kind": "blobs", "num_classes": 6, "samples_per_class": 20, "dim": 4, "noise_sigma": 0.8}],
    "novel_classes": [4, 5]
  },
  "sampler": {"many_shot_repeats": 1, "few_shot_repeats": 4, "negative_multipliers": [1, 2], "hyper_set": [0.1, 1]},
  "train": {"epochs": 3, "batch_size": 16, "hidden": 4},
  "episodes": {"n_way": 2, "k_shot": 1, "queries_per_class": 5, "n_episodes": 20}
})";

struct Run {
  int code;
  std::string out;
};

Run cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "metafunc");
  std::ostringstream out;
  const int code = cli::run(args, out);
  return {code, out.str()};
}

double number_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  if (pos == std::string::npos) {
    ADD_FAILURE() << "no " << key << " in output:\n" << text;
    return NAN;
  }
  return std::stod(text.substr(pos + key.size() + 1));
}

/// gen + sample + train + eval in `dir`, all from kPipelineConfig.
void run_pipeline(const fs::path& dir, const std::string& workers) {
  const auto cfg = (dir / "run.json").string();
  write_file(cfg, kPipelineConfig);
  const auto p = [&](const char* name) { return (dir / name).string(); };
  ASSERT_EQ(cli_run({"gen", "--config", cfg, "--out", p("base.embf"), "--novel-out", p("novel.embf")}).code, 0);
  ASSERT_EQ(cli_run({"sample", "--config", cfg, "--workers", workers, "--embeddings", p("base.embf"), "--out",
                     p("set.fset")})
                .code,
            0);
  ASSERT_EQ(cli_run({"train", "--config", cfg, "--fset", p("set.fset"), "--out", p("model.mflm"), "--history",
                     p("history.json")})
                .code,
            0);
  ASSERT_EQ(cli_run({"eval", "--config", cfg, "--workers", workers, "--novel", p("novel.embf"), "--model",
                     p("model.mflm"), "--out", p("report.json")})
                .code,
            0);
}

TEST(Cli, GenWritesEmbeddings) {
  const auto dir = testing::scratch_dir();
  write_file(dir / "g.json", R"({"gen": {"distributions": {"kind": "moons", "num_classes": 2, "dim": 2}, "lift_dim": 5}})");
  const auto r = cli_run({"gen", "--config", (dir / "g.json").string(), "--out", (dir / "e.embf").string()});
  ASSERT_EQ(r.code, 0) << r.out;
  const auto bytes = read_file(dir / "e.embf");
  EXPECT_EQ(bytes.substr(0, 4), "EMBF");
  const auto set = load_embeddings(dir / "e.embf");
  EXPECT_EQ(set.dim(), 5u);
  EXPECT_EQ(set.num_classes(), 2u);

  // CSV round trip through gen.
  ASSERT_EQ(cli_run({"gen", "--config", (dir / "g.json").string(), "--out", (dir / "e.csv").string()}).code, 0);
  write_file(dir / "c.json", R"({"gen": {"csv": ")" + (dir / "e.csv").string() + R"("}})");
  ASSERT_EQ(cli_run({"gen", "--config", (dir / "c.json").string(), "--out", (dir / "c.embf").string()}).code, 0);
  EXPECT_EQ(load_embeddings(dir / "c.embf"), set);
}

TEST(Cli, ConfigAndIoErrors) {
  const auto dir = testing::scratch_dir();
  write_file(dir / "bad.json", R"({"gen": {"distributions": {"kind": "blobs", "colour": 3}}})");
  EXPECT_EQ(cli_run({"gen", "--config", (dir / "bad.json").string(), "--out", (dir / "x.embf").string()}).code, 2);
  write_file(dir / "top.json", R"({"sed": 1})");
  EXPECT_EQ(cli_run({"gen", "--config", (dir / "top.json").string(), "--out", (dir / "x.embf").string()}).code, 2);
  write_file(dir / "broken.json", "{");
  EXPECT_EQ(cli_run({"gen", "--config", (dir / "broken.json").string(), "--out", (dir / "x.embf").string()}).code,
            2);
  EXPECT_EQ(cli_run({"gen", "--config", (dir / "missing.json").string()}).code, 3);
  EXPECT_EQ(cli_run({"frobnicate"}).code, 2);
  EXPECT_EQ(cli_run({"gen", "--seed", "abc"}).code, 2);

  write_file(dir / "ok.json", R"({"gen": {"distributions": {"kind": "blobs"}}})");
  write_file(dir / "blocker", "");
  EXPECT_EQ(cli_run({"gen", "--config", (dir / "ok.json").string(), "--out", (dir / "blocker" / "x.embf").string()}).code,
            3);
  EXPECT_EQ(cli_run({"sample", "--embeddings", (dir / "nope.embf").string(), "--out", (dir / "s.fset").string()}).code,
            3);
}

TEST(Cli, SampleCountMatchesClosedForm) {
  const auto dir = testing::scratch_dir();
  write_file(dir / "s.json", R"({
    "gen": {"distributions": {"kind": "blobs", "num_classes": 4, "samples_per_class": 12, "dim": 3}},
    "sampler": {"many_shot_repeats": 2, "few_shot_repeats": 3, "negative_multipliers": [1, 2],
                "hyper_set": [0.1, 1, 10]}
  })");
  const auto cfg = (dir / "s.json").string();
  ASSERT_EQ(cli_run({"gen", "--config", cfg, "--out", (dir / "b.embf").string()}).code, 0);
  const auto r = cli_run({"sample", "--config", cfg, "--embeddings", (dir / "b.embf").string(), "--out",
                          (dir / "a.fset").string()});
  ASSERT_EQ(r.code, 0);
  const std::size_t product = 4 * 2 * 3 * 2 * 3;
  EXPECT_NE(r.out.find("tuples: " + std::to_string(product) + " (expected " + std::to_string(product) + ")"),
            std::string::npos)
      << r.out;
  EXPECT_EQ(load_functional_set(dir / "a.fset").size(), product);

  ASSERT_EQ(cli_run({"sample", "--config", cfg, "--workers", "3", "--embeddings", (dir / "b.embf").string(), "--out",
                     (dir / "b.fset").string()})
                .code,
            0);
  EXPECT_EQ(read_file(dir / "a.fset"), read_file(dir / "b.fset"));
  ASSERT_EQ(cli_run({"sample", "--config", cfg, "--seed", "99", "--embeddings", (dir / "b.embf").string(), "--out",
                     (dir / "c.fset").string()})
                .code,
            0);
  EXPECT_NE(read_file(dir / "a.fset"), read_file(dir / "c.fset"));
}

TEST(Cli, MulticlassSampleConcatenatesOuterLoops) {
  const auto dir = testing::scratch_dir();
  write_file(dir / "m.json", R"({
    "gen": {"distributions": {"kind": "blobs", "num_classes": 5, "samples_per_class": 10, "dim": 3}},
    "sampler": {"n_way": 3, "outer_loops": 2, "many_shot_repeats": 2, "few_shot_repeats": 3, "hyper_set": [1]}
  })");
  const auto cfg = (dir / "m.json").string();
  ASSERT_EQ(cli_run({"gen", "--config", cfg, "--out", (dir / "b.embf").string()}).code, 0);
  const auto r = cli_run({"sample", "--config", cfg, "--embeddings", (dir / "b.embf").string(), "--out",
                          (dir / "m.fset").string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("tuples: 12 (expected 12)"), std::string::npos) << r.out;
}

TEST(Cli, TrainReportsIdentityStart) {
  const auto dir = testing::scratch_dir();
  run_pipeline(dir, "1");
  const auto r = cli_run({"train", "--config", (dir / "run.json").string(), "--fset", (dir / "set.fset").string(),
                          "--out", (dir / "m2.mflm").string()});
  ASSERT_EQ(r.code, 0);
  const auto first_epoch = r.out.substr(r.out.find("epoch 0"));
  const double epoch0 = number_after(first_epoch, "val_mse");
  const double identity = number_after(r.out, "identity_val_mse");
  EXPECT_NEAR(epoch0, identity, 1e-6);
  EXPECT_LT(number_after(r.out, "best_val_mse"), identity);
  EXPECT_EQ(read_file(dir / "m2.mflm"), read_file(dir / "model.mflm"));
  EXPECT_EQ(read_file(dir / "m2.mflm").substr(0, 4), "MFLM");

  const auto hist = nlohmann::json::parse(read_file(dir / "history.json"));
  EXPECT_EQ(hist["epochs"].size(), 4u);
  EXPECT_NEAR(hist["epochs"][0]["val_mse"].get<double>(), hist["identity_val_mse"].get<double>(), 1e-6);
}

TEST(Cli, TrainErrors) {
  const auto dir = testing::scratch_dir();
  run_pipeline(dir, "1");
  const auto cfg = (dir / "run.json").string();
  EXPECT_EQ(cli_run({"train", "--config", cfg, "--fset", (dir / "set.fset").string(), "--variant", "deep", "--out",
                     (dir / "x.mflm").string()})
                .code,
            2);
  EXPECT_EQ(cli_run({"train", "--config", cfg, "--fset", (dir / "set.fset").string(), "--depth", "0", "--out",
                     (dir / "x.mflm").string()})
                .code,
            2);

  auto fset = load_functional_set(dir / "set.fset");
  fset.tuples[2].f_tilde[1] = std::nanf("");
  save_functional_set(fset, dir / "nan.fset");
  EXPECT_EQ(cli_run({"train", "--config", cfg, "--fset", (dir / "nan.fset").string(), "--out",
                     (dir / "x.mflm").string()})
                .code,
            4);

  write_file(dir / "junk.fset", "FSETjunk");
  EXPECT_EQ(cli_run({"train", "--config", cfg, "--fset", (dir / "junk.fset").string(), "--out",
                     (dir / "x.mflm").string()})
                .code,
            3);
}

TEST(Cli, EvalPairedAndIdentity) {
  const auto dir = testing::scratch_dir();
  run_pipeline(dir, "1");
  const auto cfg = (dir / "run.json").string();

  const auto paired = nlohmann::json::parse(read_file(dir / "report.json"));
  ASSERT_EQ(paired.size(), 2u);
  EXPECT_EQ(paired[0]["name"], "vanilla");
  EXPECT_EQ(paired[1]["name"], "transformed");

  std::istringstream csv(read_file(dir / "report.csv"));
  std::string line;
  std::getline(csv, line);
  for (std::size_t i = 0; i < 2; ++i) {
    std::getline(csv, line);
    const auto mean = line.substr(0, line.rfind(','));
    EXPECT_EQ(std::stod(mean.substr(mean.rfind(',') + 1)), paired[i]["mean"].get<double>());
  }

  const auto plain = cli_run({"eval", "--config", cfg, "--novel", (dir / "novel.embf").string(), "--out",
                              (dir / "plain.json").string()});
  ASSERT_EQ(plain.code, 0);
  EXPECT_EQ(plain.out.find("delta:"), std::string::npos);
  const auto plain_json = nlohmann::json::parse(read_file(dir / "plain.json"));
  ASSERT_EQ(plain_json.size(), 1u);

  const auto fset = load_functional_set(dir / "set.fset");
  save_model(MflModel({}, MflDims::of(fset), 4, 1), dir / "identity.mflm");
  const auto ident = cli_run({"eval", "--config", cfg, "--novel", (dir / "novel.embf").string(), "--model",
                              (dir / "identity.mflm").string(), "--out", (dir / "ident.json").string()});
  ASSERT_EQ(ident.code, 0);
  EXPECT_NE(ident.out.find("delta:"), std::string::npos);
  const auto ident_json = nlohmann::json::parse(read_file(dir / "ident.json"));
  EXPECT_EQ(ident_json[1]["per_episode"], plain_json[0]["per_episode"]);
  EXPECT_EQ(ident_json[0]["per_episode"], plain_json[0]["per_episode"]);
}

TEST(Cli, PerClassAndCrossDomain) {
  const auto dir = testing::scratch_dir();
  run_pipeline(dir, "1");
  const auto cfg = (dir / "run.json").string();
  ASSERT_EQ(cli_run({"perclass", "--config", cfg, "--novel", (dir / "novel.embf").string(), "--model",
                     (dir / "model.mflm").string(), "--out", (dir / "pc.csv").string()})
                .code,
            0);
  const auto table = read_file(dir / "pc.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "class,vanilla,transformed,delta");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_EQ(cli_run({"perclass", "--config", cfg, "--novel", (dir / "novel.embf").string(), "--out",
                     (dir / "pc.csv").string()})
                .code,
            2);

  const auto x = cli_run({"xdomain", "--config", cfg, "--embeddings", (dir / "base.embf").string(), "--novel",
                          (dir / "novel.embf").string(), "--variant", "commfl", "--out", (dir / "x.json").string()});
  ASSERT_EQ(x.code, 0);
  EXPECT_EQ(nlohmann::json::parse(read_file(dir / "x.json")).size(), 2u);
}

TEST(Cli, BoundaryOutputs) {
  const auto dir = testing::scratch_dir();
  write_file(dir / "b.json", R"({
    "gen": {"distributions": {"kind": "blobs", "num_classes": 2, "samples_per_class": 20, "dim": 2}},
    "sampler": {"many_shot_repeats": 1, "few_shot_repeats": 5, "negative_multipliers": [1], "hyper_set": [1],
                "many_shot_negative_factor": 1},
    "train": {"epochs": 2, "batch_size": 8, "hidden": 2, "val_fraction": 0},
    "boundary": {"shots": 2, "resolution": 9, "ppm": true}
  })");
  const auto cfg = (dir / "b.json").string();
  ASSERT_EQ(cli_run({"gen", "--config", cfg, "--out", (dir / "e.embf").string()}).code, 0);
  ASSERT_EQ(cli_run({"train", "--config", cfg, "--embeddings", (dir / "e.embf").string(), "--out",
                     (dir / "m.mflm").string()})
                .code,
            0);
  ASSERT_EQ(cli_run({"boundary", "--config", cfg, "--embeddings", (dir / "e.embf").string(), "--model",
                     (dir / "m.mflm").string(), "--out", (dir / "grid.csv").string()})
                .code,
            0);
  const auto grid = read_file(dir / "grid.csv");
  EXPECT_EQ(grid.substr(0, 10), "x,y,score\n");
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '\n'), 82);
  EXPECT_TRUE(fs::exists(dir / "grid.transformed.csv"));
  EXPECT_EQ(read_file(dir / "grid.ppm").substr(0, 11), "P6\n9 9\n255\n");
  EXPECT_TRUE(fs::exists(dir / "grid.transformed.ppm"));

  write_file(dir / "d.json", R"({"gen": {"distributions": {"kind": "blobs", "num_classes": 2, "dim": 3}}})");
  ASSERT_EQ(cli_run({"gen", "--config", (dir / "d.json").string(), "--out", (dir / "e3.embf").string()}).code, 0);
  EXPECT_EQ(cli_run({"boundary", "--embeddings", (dir / "e3.embf").string(), "--out", (dir / "g3.csv").string()}).code,
            2);
}

TEST(Cli, PipelineIsReproducible) {
  const auto a = testing::scratch_dir() / "a";
  const auto b = a.parent_path() / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  run_pipeline(a, "1");
  run_pipeline(b, "3");
  for (const char* f : {"base.embf", "novel.embf", "set.fset", "model.mflm", "history.json", "report.json",
                        "report.csv"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

}  // namespace
}  // namespace metafunc
