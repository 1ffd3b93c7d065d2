#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace metafunc {

/// Labelled fixed-dimension feature vectors standing in for a pretrained
/// representation space. Rows are stored contiguously (row-major).
class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  /// Validates that every row has `dim` finite values. Throws DataError /
  /// DimensionError.
  EmbeddingSet(std::size_t dim, std::vector<std::uint32_t> labels, std::vector<double> values);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  std::uint32_t label(std::size_t i) const { return labels_.at(i); }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<const std::uint32_t> labels() const noexcept { return labels_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Sorted distinct class ids.
  std::vector<std::uint32_t> class_ids() const;
  /// Record positions of a class, ascending. Throws UnknownClass.
  std::span<const std::size_t> indices_of(std::uint32_t class_id) const;
  bool has_class(std::uint32_t class_id) const { return class_index_.contains(class_id); }
  std::size_t num_classes() const noexcept { return class_index_.size(); }
  std::size_t smallest_class_size() const noexcept;

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.dim_ == b.dim_ && a.labels_ == b.labels_ && a.values_ == b.values_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> labels_;
  std::vector<double> values_;
  std::map<std::uint32_t, std::vector<std::size_t>> class_index_;
};

enum class ShapeKind { blobs, moons, circles, strips };

/// Parameters of a synthetic distribution. The 2-D base shape is placed at
/// `offset`, lifted to `dim` by a seeded orthonormal map and then perturbed by
/// isotropic N(0, noise_sigma^2) noise in all `dim` coordinates.
struct DistributionSpec {
  ShapeKind kind = ShapeKind::blobs;
  std::uint32_t num_classes = 2;
  std::uint32_t samples_per_class = 100;
  std::uint32_t dim = 2;
  double noise_sigma = 0.1;
  double separation = 1.0;
  std::uint64_t seed = 0;
  std::array<double, 2> offset{0.0, 0.0};
  /// Seed of the lifting rotation; defaults to `seed`. Groups sharing a lift
  /// seed share one embedding plane.
  std::optional<std::uint64_t> lift_seed;
};

/// Class ids are 0..num_classes-1; records are class-major. Output values are
/// rounded to f32-representable doubles so they round-trip through the binary
/// format exactly. Throws EmptyClass, UnsupportedShape, ConfigError.
EmbeddingSet generate_synthetic(const DistributionSpec& spec);

/// Generates each spec and concatenates them, renumbering classes densely in
/// order (group 0 gets 0..n0-1, group 1 continues, ...).
EmbeddingSet generate_mixture(std::span<const DistributionSpec> specs);

/// Concatenates sets of equal dimension, renumbering classes densely.
EmbeddingSet concat_relabel(std::span<const EmbeddingSet> sets);

/// Seeded orthonormal embedding R^dim -> R^target_dim (isometric). Identity
/// when target_dim == dim. Throws DimensionShrink.
EmbeddingSet lift_dimension(const EmbeddingSet& set, std::size_t target_dim, std::uint64_t seed);

/// Column-orthonormal target_dim x dim matrix (row-major) used by lift_dimension.
std::vector<double> orthonormal_lift_matrix(std::size_t dim, std::size_t target_dim, std::uint64_t seed);

/// Partition by class lists. Throws OverlappingSplit, UnknownClass, EmptySplit.
std::pair<EmbeddingSet, EmbeddingSet> split_classes(const EmbeddingSet& set,
                                                    std::span<const std::uint32_t> base_ids,
                                                    std::span<const std::uint32_t> novel_ids);

/// Records of the listed classes, in original order.
EmbeddingSet select_classes(const EmbeddingSet& set, std::span<const std::uint32_t> ids);

// Binary "EMBF" format: magic, u32 version=1, u32 d, u32 n, then n rows of
// (u32 class_id, d x f32). Little-endian.
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);
EmbeddingSet decode_embeddings(std::vector<std::uint8_t> bytes);
std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set);

// CSV with header `class,f0,...,f{d-1}`.
EmbeddingSet load_embeddings_csv(const std::filesystem::path& path);
void save_embeddings_csv(const EmbeddingSet& set, const std::filesystem::path& path);

}  // namespace metafunc
