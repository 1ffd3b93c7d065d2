#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metafunc/embeddings.hpp"
#include "metafunc/episodes.hpp"
#include "metafunc/eval.hpp"
#include "metafunc/functional.hpp"

namespace metafunc::cli {

struct GenSection {
  std::vector<DistributionSpec> distributions;
  std::optional<std::string> csv;        ///< import instead of generating
  std::optional<std::uint32_t> lift_dim;  ///< lift after generation/import
  std::optional<std::uint64_t> lift_seed;
  std::vector<std::uint32_t> novel_classes;  ///< non-empty: split into base/novel
};

struct BoundarySection {
  std::vector<std::uint32_t> classes;  ///< positive, negative; empty = first two ids
  std::uint32_t shots = 1;
  GridBounds bounds{-3.0, 3.0, -3.0, 3.0};
  std::uint32_t resolution = 101;
  bool ppm = false;
};

struct Paths {
  std::optional<std::string> embeddings;
  std::optional<std::string> novel;
  std::optional<std::string> fset;
  std::optional<std::string> model;
  std::optional<std::string> out;
  std::optional<std::string> novel_out;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned workers = 1;
  Paths paths;
  GenSection gen;
  SamplerConfig sampler;
  MflVariant variant;
  MflTrainConfig train;
  EpisodeConfig episodes;
  bool ensemble = false;  ///< eval: add an ensemble arm over episodes C values
  BoundarySection boundary;
};

/// Parses a JSON document; unknown keys and type mismatches are ConfigError.
/// seed_override replaces the document seed before per-distribution seeds are derived.
RunConfig parse_run_config(const std::string& text, std::optional<std::uint64_t> seed_override = {});
/// Reads and parses; a missing file is an IoError.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

ShapeKind parse_shape(const std::string& name);
BaseClassifier parse_classifier(const std::string& name);

}  // namespace metafunc::cli
