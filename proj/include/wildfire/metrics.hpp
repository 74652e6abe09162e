#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wildfire/dataio.hpp"

namespace wildfire {

class ModelGraph;

// All classification metrics take per-pixel scores and labels in {-1,0,1};
// pixels labelled -1 are skipped everywhere.

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
};

/// A ratio that falls back to 0 when its denominator is empty.
struct Ratio {
  double value = 0.0;
  bool degenerate = false;
};

/// Counts at `threshold` (prediction positive when prob > threshold).
ConfusionCounts confusion(std::span<const float> probs, std::span<const float> labels,
                          double threshold = 0.5);
Ratio precision(const ConfusionCounts& c);
Ratio recall(const ConfusionCounts& c);

/// Mann-Whitney statistic with ties counted 1/2. Throws
/// UndefinedMetricError unless both classes are present.
double roc_auc(std::span<const float> scores, std::span<const float> labels);

/// Step-wise average precision: mean over positives (descending score,
/// ties in input order) of the precision at that rank. Throws
/// UndefinedMetricError without positives.
double pr_auc(std::span<const float> scores, std::span<const float> labels);

/// Sample correlation in float64. Throws UndefinedMetricError when either
/// input has zero variance.
double pearson(std::span<const float> a, std::span<const float> b);

inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimSigma = 1.5;

/// Mean local SSIM over every position where the 7×7 Gaussian window fits.
double ssim(std::span<const float> a, std::span<const float> b, Index height, Index width,
            double data_range);

enum class SimilarityMeasure { Pearson, Ssim };
using FeatureMatrix = std::array<std::array<double, kFeatureCount>, kFeatureCount>;

/// 12×12 feature similarity over raw values. Pearson pools every pixel of
/// every sample. SSIM rescales each feature to [0,1] by its raw extremes
/// (data range 1) and averages the per-sample index.
FeatureMatrix pairwise_matrix(const DatasetContainer& data, SimilarityMeasure measure);
/// CSV with the feature names as header row and first column.
std::string format_matrix_csv(const FeatureMatrix& m);

/// Threshold metrics plus ranking metrics for one evaluation.
struct MetricSummary {
  std::optional<double> auc, auc_pr;  // empty when undefined
  Ratio precision, recall;
  ConfusionCounts counts;
  double threshold = 0.5;
  std::uint64_t masked = 0;

  std::string to_json() const;
};

MetricSummary summarize(std::span<const float> probs, std::span<const float> labels,
                        double threshold = 0.5);

struct CostRow {
  std::string model;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // one forward pass, single input
};

/// One row per graph; a null entry yields a zero row labelled "empty".
std::vector<CostRow> cost_report(std::span<ModelGraph* const> graphs);
/// `Model,Params,FLOPs,Parameters (M),GFlops` with one row per model.
std::string format_cost_csv(const std::vector<CostRow>& rows);
/// Plain-text table with models as columns and the two cost rows.
std::string format_cost_table(const std::vector<CostRow>& rows);

}  // namespace wildfire
