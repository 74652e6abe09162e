#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wildfire/tensor.hpp"

namespace wildfire {

inline constexpr int kFeatureCount = 12;
inline constexpr int kChannelCount = 13;  // features plus label
inline constexpr std::uint32_t kContainerVersion = 1;

enum Feature : int {
  kElevation,
  kWindDirection,
  kWindVelocity,
  kMinTemp,
  kMaxTemp,
  kHumidity,
  kPrecipitation,
  kDrought,
  kVegetation,
  kPopulationDensity,
  kErc,
  kPreviousFireMask,
};

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "Elevation", "WindDirection", "WindVelocity", "MinTemp",           "MaxTemp", "Humidity",
    "Precipitation", "Drought",   "Vegetation",   "PopulationDensity", "ERC",     "PreviousFireMask"};

/// Index of a feature by name; throws std::invalid_argument if unknown.
int feature_index(std::string_view name);

struct FeatureRange {
  float min = 0.0f, max = 1.0f, mean = 0.0f, std = 1.0f;
};

struct FeatureStats {
  std::array<FeatureRange, kFeatureCount> features{};

  /// Throws std::invalid_argument on non-finite values, std ≤ 0 or
  /// min ≤ mean ≤ max violations.
  void validate() const;
  std::string digest() const;
};

/// `feature,min,max,mean,std` with a header row and one row per feature.
FeatureStats parse_stats_csv(std::string_view text);
std::string format_stats_csv(const FeatureStats& stats);

/// 12 feature grids and one label grid, all H×W, row-major.
struct Sample {
  Index height = 0, width = 0;
  std::vector<float> features;  // [12, H, W]
  std::vector<float> label;     // [H, W], values in {-1, 0, 1}

  Sample() = default;
  Sample(Index h, Index w);
  Index plane() const noexcept { return height * width; }
  float* feature(int c) { return features.data() + c * plane(); }
  const float* feature(int c) const { return features.data() + c * plane(); }
};

enum class SplitTag { Train, Val, Test };
std::string_view split_name(SplitTag tag);

struct DatasetContainer {
  Index height = 0, width = 0;
  FeatureStats stats;
  std::vector<Sample> samples;
  std::optional<SplitTag> split;  // in memory only

  /// Digest of the encoded container bytes.
  std::string digest() const;
};

/// Digest of the fixed channel order (header field).
std::string channel_order_digest();

std::string encode_container(const DatasetContainer& c);
DatasetContainer decode_container(std::string_view bytes);
void save_container(const DatasetContainer& c, const std::filesystem::path& path);
DatasetContainer load_container(const std::filesystem::path& path);

/// Per-feature min/max/mean/std (population) over every pixel of every
/// sample. A zero spread is replaced by 1 so the stats stay valid.
FeatureStats compute_stats(const std::vector<Sample>& samples);

/// x -> (clip(x, min, max) - mean) / std for every feature except the
/// previous fire mask; label untouched.
Sample normalize(const Sample& sample, const FeatureStats& stats);

struct Crop {
  Sample sample;
  Index dy = 0, dx = 0;
};

/// One offset pair from the counter-based generator keyed by `seed`,
/// applied to all 13 grids.
Crop random_crop(const Sample& sample, std::uint64_t seed, Index size = 32);

struct SynthConfig {
  std::size_t count = 100;
  Index height = 64, width = 64;
  std::uint64_t seed = 0;
  bool ignition = true;
  /// Label becomes a threshold of one smooth feature (ERC).
  bool separable = false;
};

DatasetContainer synthesize_dataset(const SynthConfig& config);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Deterministic permutation cut by `ratios` (must sum to 1). Each part is
/// returned in ascending index order.
SplitIndices split_indices(std::size_t count, std::array<double, 3> ratios, std::uint64_t seed);

/// Nested subset: the first round(p·n) entries of one seeded permutation
/// of `train`, returned in the order they appear in `train`.
std::vector<std::size_t> fraction_indices(const std::vector<std::size_t>& train, double p,
                                          std::uint64_t seed);

DatasetContainer subset(const DatasetContainer& c, const std::vector<std::size_t>& ids,
                        std::optional<SplitTag> tag = std::nullopt);

/// Digest of an id list, for checking that splits are identical.
std::string ids_digest(const std::vector<std::size_t>& ids);

/// Normalized, cropped batch ready for a model: features [N,12,s,s] and
/// labels [N,s,s]. Crop offsets come from (crop_seed, sample id).
struct Batch {
  Tensor features;
  Tensor labels;
};
/// Crop key used for every evaluation pass.
inline constexpr std::uint64_t kEvalCropSeed = 0x5EEDC0DEULL;

Batch make_batch(const DatasetContainer& c, const std::vector<std::size_t>& ids,
                 std::uint64_t crop_seed, Index size = 32);

}  // namespace wildfire
