#include <gtest/gtest.h>

#include <cmath>
#include <utility>

#include "metafunc/functional.hpp"
#include "synthetic_suite.hpp"
#include "test_util.hpp"

namespace metafunc {
namespace {

using testing::code_of;

const EmbeddingSet& small_suite() {
  static const EmbeddingSet set = [] {
    testing::SuiteParams p;
    p.dim = 8;
    p.blob_classes = 6;
    p.moon_pairs = 2;
    p.samples_per_class = 30;
    p.noise_sigma = 1.5;
    return testing::make_suite_all(p);
  }();
  return set;
}

SamplerConfig small_sampler() {
  SamplerConfig c;
  c.many_shot_repeats = 2;
  c.few_shot_repeats = 10;
  c.negative_multipliers = {1, 2, 3};
  c.hyper_set = {0.1, 1.0, 10.0};
  return c;
}

const FunctionalSet& small_fset() {
  static const FunctionalSet set = sample_binary_functional_set(small_suite(), small_sampler(), 7);
  return set;
}

MflTrainConfig quick_cfg(std::uint32_t epochs = 8) {
  MflTrainConfig c;
  c.epochs = epochs;
  c.lr_decay_epoch = 6;
  c.batch_size = 64;
  c.hidden = 16;
  c.seed = 3;
  return c;
}

std::vector<double> as_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

void randomize(ResidualRegressor& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto block : net.parameter_blocks())
    for (double& v : block) v = rng.uniform(-0.5, 0.5);
}

TEST(MflKind, Parse) {
  EXPECT_EQ(parse_mfl_kind("vanilla"), MflKind::vanilla);
  EXPECT_EQ(parse_mfl_kind("mfl-p"), MflKind::with_prototypes);
  EXPECT_EQ(parse_mfl_kind("commfl"), MflKind::composite);
  EXPECT_EQ(to_string(MflKind::composite), "composite");
  EXPECT_EQ(code_of([] { parse_mfl_kind("deep"); }), ErrorCode::ConfigError);
}

TEST(MflModel, BlockWiring) {
  const MflDims dims{4, 5, 8};
  const MflModel p({MflKind::with_prototypes, 2}, dims, 3, 1);
  EXPECT_EQ(p.block(1).shape(), (RegressorShape{13, 3, 5, 0, 5}));
  const MflModel c({MflKind::composite, 2}, dims, 0, 1);
  EXPECT_EQ(c.block(0).shape(), (RegressorShape{5, ResidualRegressor::default_hidden(5), 5, 0, 5}));
  EXPECT_EQ(c.proto_block(1).shape(), (RegressorShape{8, ResidualRegressor::default_hidden(5), 5, 0, 0}));
}

TEST(MflModel, FreshModelIsIdentity) {
  const auto& t = small_fset().tuples[5];
  for (auto kind : {MflKind::vanilla, MflKind::with_prototypes}) {
    const MflModel m({kind, 3}, MflDims::of(small_fset()), 8, 1);
    EXPECT_EQ(m.apply(as_double(t.f_phi), as_double(t.f_p)), as_double(t.f_phi));
  }
}

TEST(MflModel, CompositeIsSumOfBranches) {
  MflModel m({MflKind::composite, 1}, MflDims::of(small_fset()), 8, 1);
  randomize(m.block(0), 2);
  randomize(m.proto_block(0), 3);
  const auto& t = small_fset().tuples[9];
  const auto phi = as_double(t.f_phi);
  const auto fp = as_double(t.f_p);
  const auto out = m.apply(phi, fp);
  const auto a = m.block(0).forward_eval(MatrixView{phi.data(), 1, phi.size()});
  const auto b = m.proto_block(0).forward_eval(MatrixView{fp.data(), 1, fp.size()});
  for (std::size_t j = 0; j < out.size(); ++j) EXPECT_EQ(out[j], a.data[j] + b.data[j]);
}

TEST(MflModel, TruncationMatchesLeadingBlocks) {
  MflModel m({MflKind::vanilla, 3}, MflDims::of(small_fset()), 8, 1);
  for (std::size_t x = 0; x < 3; ++x) randomize(m.block(x), 10 + x);
  const auto phi = as_double(small_fset().tuples[0].f_phi);
  const auto one = m.truncated(1).apply(phi);
  const auto direct = m.block(0).forward_eval(MatrixView{phi.data(), 1, phi.size()});
  EXPECT_EQ(one, direct.data);
  const auto two = m.truncated(2).apply(phi);
  EXPECT_EQ(two, m.block(1).forward_eval(direct).data);
  EXPECT_EQ(m.truncated(2).depth(), 2u);
  EXPECT_EQ(code_of([&] { m.truncated(4); }), ErrorCode::ConfigError);
}

TEST(MflModel, MissingPrototypes) {
  const MflModel m({MflKind::with_prototypes, 1}, MflDims::of(small_fset()), 8, 1);
  const auto phi = as_double(small_fset().tuples[0].f_phi);
  EXPECT_EQ(code_of([&] { m.apply(phi); }), ErrorCode::MissingPrototypes);
  const MflModel c({MflKind::composite, 1}, MflDims::of(small_fset()), 8, 1);
  EXPECT_EQ(code_of([&] { c.apply(phi); }), ErrorCode::MissingPrototypes);
  const MflModel v({MflKind::vanilla, 1}, MflDims::of(small_fset()), 8, 1);
  EXPECT_EQ(code_of([&] { v.apply(std::vector<double>(3, 0.0)); }), ErrorCode::DimensionError);
}

TEST(Ensemble, Properties) {
  MflModel m({MflKind::with_prototypes, 2}, MflDims::of(small_fset()), 8, 1);
  randomize(m.block(0), 4);
  randomize(m.block(1), 5);
  const auto fp = as_double(small_fset().tuples[0].f_p);
  std::vector<std::vector<double>> three;
  for (std::size_t i = 0; i < 3; ++i) three.push_back(as_double(small_fset().tuples[i].f_phi));

  const std::vector<std::vector<double>> single{three[0]};
  EXPECT_EQ(ensemble_transform(m, single, fp), m.apply(three[0], fp));
  const std::vector<std::vector<double>> same{three[0], three[0], three[0]};
  const auto s = ensemble_transform(m, same, fp);
  const auto ref = m.apply(three[0], fp);
  for (std::size_t j = 0; j < s.size(); ++j) EXPECT_NEAR(s[j], ref[j], 1e-15 * (1 + std::abs(ref[j])));

  const auto e = ensemble_transform(m, three, fp);
  for (std::size_t j = 0; j < e.size(); ++j) {
    double mean = 0.0;
    for (const auto& c : three) mean += m.apply(c, fp)[j];
    EXPECT_NEAR(e[j], mean / 3, 1e-7);
  }
  EXPECT_EQ(code_of([&] { ensemble_transform(m, std::span<const std::vector<double>>{}, fp); }),
            ErrorCode::EmptyEnsemble);
}

TEST(Split, SizesAndDeterminism) {
  const auto [train, val] = split_train_validation(100, 0.1, 5);
  EXPECT_EQ(train.size(), 90u);
  EXPECT_EQ(val.size(), 10u);
  EXPECT_EQ(split_train_validation(100, 0.1, 5).second, val);
  EXPECT_EQ(split_train_validation(5, 0.1, 5).second.size(), 1u);
  EXPECT_EQ(split_train_validation(10, 0.0, 5).second.size(), 0u);
  std::vector<std::size_t> all(train);
  all.insert(all.end(), val.begin(), val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
}

TEST(Train, EpochZeroIsIdentityBaseline) {
  const auto r = train_mfl(small_fset(), {MflKind::vanilla, 1}, quick_cfg(1));
  ASSERT_EQ(r.history.epochs.size(), 2u);
  EXPECT_NEAR(r.history.epochs[0].train_mse, r.history.identity_train_mse, 1e-6);
  EXPECT_NEAR(r.history.epochs[0].val_mse, r.history.identity_val_mse, 1e-6);
}

TEST(Train, BeatsIdentityOnValidation) {
  for (auto kind : {MflKind::vanilla, MflKind::with_prototypes, MflKind::composite}) {
    const auto r = train_mfl(small_fset(), {kind, 1}, quick_cfg());
    const auto [train, val] = split_train_validation(small_fset().size(), 0.1, quick_cfg().seed);
    const double held_out = functional_mse(r.model, small_fset(), val);
    EXPECT_LT(held_out, identity_mse(small_fset(), val)) << to_string(kind);
    EXPECT_DOUBLE_EQ(held_out, r.history.epochs[r.history.best_epoch].val_mse);
  }
}

TEST(Train, SelectsLowestValidationEpoch) {
  const auto r = train_mfl(small_fset(), {MflKind::vanilla, 1}, quick_cfg());
  for (const auto& e : r.history.epochs) EXPECT_GE(e.val_mse, r.history.epochs[r.history.best_epoch].val_mse);
  EXPECT_LE(r.history.epochs[r.history.best_epoch].val_mse, r.history.identity_val_mse);
}

TEST(Train, DepthOneMatchesFirstBlockOfDeeperModel) {
  auto cfg = quick_cfg(1);
  cfg.select_best = false;
  const auto one = train_mfl(small_fset(), {MflKind::vanilla, 1}, cfg);
  const auto three = train_mfl(small_fset(), {MflKind::vanilla, 3}, cfg);
  EXPECT_EQ(one.model.block(0), three.model.block(0));
  const auto comp1 = train_mfl(small_fset(), {MflKind::composite, 1}, cfg);
  const auto comp2 = train_mfl(small_fset(), {MflKind::composite, 2}, cfg);
  EXPECT_EQ(comp1.model.block(0), comp2.model.block(0));
  EXPECT_EQ(comp1.model.proto_block(0), comp2.model.proto_block(0));
}

TEST(Train, LaterBlocksNeverAffectEarlierOnes) {
  auto cfg = quick_cfg(2);
  cfg.select_best = false;
  const MflModel init({MflKind::with_prototypes, 2}, MflDims::of(small_fset()), cfg.hidden, cfg.seed);
  MflModel perturbed = init;
  randomize(perturbed.block(1), 99);
  const auto a = train_mfl(small_fset(), init.variant(), cfg, &init);
  const auto b = train_mfl(small_fset(), init.variant(), cfg, &perturbed);
  EXPECT_EQ(a.model.block(0), b.model.block(0));
  EXPECT_NE(a.model.block(1), b.model.block(1));
}

TEST(Train, LastBlockNoWorseThanFirstOnTrainingData) {
  const auto r = train_mfl(small_fset(), {MflKind::vanilla, 3}, quick_cfg());
  ASSERT_EQ(r.history.block_train_mse.size(), 3u);
  EXPECT_LE(r.history.block_train_mse.back(), r.history.block_train_mse.front() + 1e-6);
}

TEST(Train, Deterministic) {
  const auto a = train_mfl(small_fset(), {MflKind::composite, 2}, quick_cfg(3));
  const auto b = train_mfl(small_fset(), {MflKind::composite, 2}, quick_cfg(3));
  EXPECT_EQ(encode_model(a.model), encode_model(b.model));
  auto other = quick_cfg(3);
  other.seed = 4;
  EXPECT_NE(encode_model(a.model), encode_model(train_mfl(small_fset(), {MflKind::composite, 2}, other).model));
}

TEST(Train, Errors) {
  EXPECT_EQ(code_of([] { train_mfl(FunctionalSet{8, 1, {}}, {}, quick_cfg()); }), ErrorCode::EmptyFunctionalSet);
  auto bad = small_fset();
  bad.tuples[3].f_p.pop_back();
  EXPECT_EQ(code_of([&] { train_mfl(bad, {}, quick_cfg()); }), ErrorCode::DimensionError);
  auto cfg = quick_cfg();
  cfg.batch_size = 1;
  EXPECT_EQ(code_of([&] { train_mfl(small_fset(), {}, cfg); }), ErrorCode::ConfigError);
  auto nan = small_fset();
  nan.tuples[0].f_tilde[0] = std::nanf("");
  EXPECT_EQ(code_of([&] { train_mfl(nan, {}, quick_cfg()); }), ErrorCode::NumericalError);
  const MflModel other({MflKind::vanilla, 1}, {3, 4, 6}, 4, 1);
  EXPECT_EQ(code_of([&] { train_mfl(small_fset(), {}, quick_cfg(), &other); }), ErrorCode::DimensionError);
}

TEST(Multiclass, SingleOuterLoopIsSamplePlusTrain) {
  auto sc = small_sampler();
  sc.n_way = 3;
  sc.many_shot_repeats = 4;
  sc.outer_loops = 1;
  const auto cfg = quick_cfg(3);
  const auto via = train_mfl_multiclass(small_suite(), sc, 5, {}, cfg);
  const auto direct = train_mfl(sample_multiclass_functional_set(small_suite(), sc, 5, 0), {}, cfg);
  EXPECT_EQ(via.model, direct.model);
}

TEST(Multiclass, OuterLoopsContinueTraining) {
  auto sc = small_sampler();
  sc.n_way = 3;
  sc.many_shot_repeats = 4;
  sc.outer_loops = 2;
  auto cfg = quick_cfg(3);
  const auto two = train_mfl_multiclass(small_suite(), sc, 5, {}, cfg);

  sc.outer_loops = 1;
  const auto first = train_mfl_multiclass(small_suite(), sc, 5, {}, cfg);
  auto round = cfg;
  round.seed = derive_key(cfg.seed, {1});
  const auto second = train_mfl(sample_multiclass_functional_set(small_suite(), sc, 5, 1), {}, round, &first.model);
  EXPECT_EQ(two.model, second.model);

  sc.n_way = 1;
  EXPECT_EQ(code_of([&] { train_mfl_multiclass(small_suite(), sc, 5, {}, cfg); }), ErrorCode::InvalidWay);
}

TEST(Mflm, RoundTrip) {
  MflModel m({MflKind::composite, 2}, MflDims::of(small_fset()), 8, 1);
  for (std::size_t x = 0; x < 2; ++x) {
    randomize(m.block(x), 20 + x);
    randomize(m.proto_block(x), 30 + x);
  }
  const auto bytes = encode_model(m);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MFLM");
  const auto back = decode_model(bytes);
  EXPECT_EQ(back.variant(), m.variant());
  EXPECT_EQ(back.dims(), m.dims());
  EXPECT_EQ(encode_model(back), bytes);

  const auto dir = testing::scratch_dir();
  save_model(m, dir / "m.mflm");
  EXPECT_EQ(encode_model(load_model(dir / "m.mflm")), bytes);

  auto bad_tag = bytes;
  bad_tag[4] = 7;
  EXPECT_EQ(code_of([&] { decode_model(bad_tag); }), ErrorCode::FormatError);
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  EXPECT_EQ(code_of([&] { decode_model(cut); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { load_model(dir / "missing.mflm"); }), ErrorCode::IoError);
}

}  // namespace
}  // namespace metafunc
