#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "metafunc/classifiers.hpp"
#include "metafunc/embeddings.hpp"

namespace metafunc {

enum class BaseClassifier { logistic, svm, softmax };

/// Knobs for crafting functional episodes from a base embedding set.
struct SamplerConfig {
  std::uint32_t many_shot_repeats = 5;    ///< M_l: many-shot episodes per base class
  std::uint32_t few_shot_repeats = 100;   ///< M_f: few-shot sub-episodes per many-shot episode
  std::uint32_t shot = 1;                 ///< s: positives per few-shot classifier
  std::vector<std::uint32_t> negative_multipliers{1, 2, 3, 4};  ///< k: k*s negatives
  std::vector<double> hyper_set{1e-2, 1e-1, 1.0, 1e1, 1e2};     ///< H: C values for few-shot fits
  std::uint32_t many_shot_negative_factor = 2;  ///< negatives per many-shot episode, in units of N_b
  std::uint32_t n_way = 1;                ///< 1 = binary one-vs-rest tuples, >= 2 = softmax tuples
  std::uint32_t outer_loops = 1;          ///< I_out for the multi-class procedure
  double many_shot_C = 1.0;
  BaseClassifier classifier = BaseClassifier::logistic;  ///< binary mode: logistic or svm
  FitConfig fit{};                        ///< solver settings; C is overridden per fit
};

struct TupleMeta {
  /// Binary: {positive class}. Multi-class: the sampled classes in label order.
  std::vector<std::uint32_t> classes;
  std::uint32_t shot = 0;
  std::uint32_t k = 0;
  double C = 0.0;
  std::uint32_t outer = 0;
  std::uint32_t many_repeat = 0;
  std::uint32_t few_repeat = 0;
  /// Record positions (into the base set) of the few-shot support samples.
  /// Binary: s positives then k*s negatives. Multi-class: s per class, class-major.
  std::vector<std::uint32_t> support;

  friend bool operator==(const TupleMeta&, const TupleMeta&) = default;
};

/// One training record (few-shot classifier, many-shot classifier, prototypes).
struct FunctionalTuple {
  std::vector<float> f_phi;
  std::vector<float> f_tilde;
  std::vector<float> f_p;
  TupleMeta meta;

  friend bool operator==(const FunctionalTuple&, const FunctionalTuple&) = default;
};

struct FunctionalSet {
  std::uint32_t dim = 0;
  std::uint32_t n_way = 1;  ///< 1 = binary
  std::vector<FunctionalTuple> tuples;

  std::size_t classifier_len() const noexcept { return (n_way <= 1 ? 1 : n_way) * (dim + 1u); }
  std::size_t prototype_len() const noexcept { return (n_way <= 1 ? 2 : n_way) * std::size_t{dim}; }
  std::size_t size() const noexcept { return tuples.size(); }
  bool empty() const noexcept { return tuples.empty(); }

  friend bool operator==(const FunctionalSet&, const FunctionalSet&) = default;
};

/// Closed-form tuple count of one sampling pass: binary
/// |C_base| * M_l * M_f * |k| * |H|; multi-class M_l * M_f * |H|.
std::uint64_t tuples_per_pass(const SamplerConfig& cfg, std::size_t num_base_classes);
/// tuples_per_pass times the outer-loop count.
std::uint64_t total_tuples(const SamplerConfig& cfg, std::size_t num_base_classes);

struct ManyShotEpisode {
  std::vector<std::size_t> positives;  ///< every record of the positive class
  std::vector<std::size_t> negatives;  ///< factor * N_b records drawn from other classes
};

/// The many-shot episode used for (class, repeat); exposed so callers can
/// check the few-shot/many-shot pairing.
ManyShotEpisode draw_many_shot_episode(const EmbeddingSet& base, const SamplerConfig& cfg, std::uint64_t seed,
                                       std::uint32_t positive_class, std::uint32_t repeat);

/// Tuples are ordered by (class, many repeat, few repeat, k, C). Throws
/// EmptyBase, InsufficientSamples, ConfigError.
FunctionalSet sample_binary_functional_set(const EmbeddingSet& base, const SamplerConfig& cfg, std::uint64_t seed,
                                           unsigned workers = 1);

/// One pass of multi-class sampling for outer loop `outer`. Tuples are
/// ordered by (many repeat, few repeat, C). Throws InsufficientClasses.
FunctionalSet sample_multiclass_functional_set(const EmbeddingSet& base, const SamplerConfig& cfg,
                                               std::uint64_t seed, std::uint32_t outer = 0, unsigned workers = 1);

/// Dispatches on cfg.n_way.
FunctionalSet sample_functional_set(const EmbeddingSet& base, const SamplerConfig& cfg, std::uint64_t seed,
                                    std::uint32_t outer = 0, unsigned workers = 1);

// "FSET" files: magic, u32 version, u32 d, u32 n_way, u64 count, then per
// tuple u32 classifier length, u32 prototype length, f32 payloads
// (f_phi, f_tilde, f_p) and a meta block.
std::vector<std::uint8_t> encode_functional_set(const FunctionalSet& set);
FunctionalSet decode_functional_set(std::vector<std::uint8_t> bytes);
void save_functional_set(const FunctionalSet& set, const std::filesystem::path& path);
FunctionalSet load_functional_set(const std::filesystem::path& path);

}  // namespace metafunc
