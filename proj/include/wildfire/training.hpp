#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wildfire/dataio.hpp"
#include "wildfire/metrics.hpp"
#include "wildfire/models.hpp"

namespace wildfire {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments of one parameter tensor.
struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `param` in place. State buffers are
/// sized on first use.
void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state,
               const AdamConfig& config);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);
  /// Applies the accumulated gradients, then clears them.
  void step();
  std::uint64_t steps() const noexcept { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig config_;
  std::uint64_t steps_ = 0;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 100;
  int patience = 30;
  int max_epochs = 200;
  std::optional<double> pos_weight;  // empty: negatives/positives over the training split
  std::uint64_t seed = 0;
  double fraction = 1.0;
  double min_delta = 1e-5;  // smallest validation AUC-PR gain counted as improvement
  /// Stop as soon as validation reaches both targets (unset = never).
  std::optional<double> target_auc, target_auc_pr;
  double threshold = 0.5;
  std::uint64_t split_seed = 0;  // fixed so val/test do not move with `seed`

  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(std::string_view text);
  std::string hash() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0, val_auc_pr = 0.0, val_precision = 0.0, val_recall = 0.0;
  bool improved = false;
};

struct TrainReport {
  ModelSpec spec;
  TrainConfig config;
  double pos_weight = 1.0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_auc_pr = 0.0;
  int stopped_epoch = 0;
  std::string stop_reason;  // patience | max_epochs | target | diverged
  bool diverged = false;
  std::string divergence;
  std::string checkpoint_id;  // digest of the restored parameters
  std::string train_ids, val_ids, test_ids;  // id-list digests
  std::string stats_digest;
  std::optional<MetricSummary> test;
  double wall_seconds = 0.0;  // not serialized, so reports stay byte-stable

  std::string to_json() const;
  static TrainReport from_json(std::string_view text);
};

/// Train/val/test containers cut from one dataset.
struct DataSplits {
  DatasetContainer train, val, test;
  std::vector<std::size_t> train_ids, val_ids, test_ids;  // indices into the source
};

inline constexpr std::array<double, 3> kSplitRatios = {0.8, 0.1, 0.1};

/// Fixed split by `split_seed`; the training part is then reduced to the
/// nested `fraction` subset keyed by the same seed.
DataSplits make_splits(const DatasetContainer& data, double fraction, std::uint64_t split_seed);

/// negatives / positives over unmasked pixels; 1 when either is absent.
double class_weight(const DatasetContainer& data);

/// Sigmoid probabilities for every sample (fixed evaluation crops) with
/// the matching labels, flattened in sample order.
struct Predictions {
  std::vector<float> probs, labels;
};
Predictions predict(ModelGraph& model, const DatasetContainer& data, int batch_size = 100);
MetricSummary evaluate(ModelGraph& model, const DatasetContainer& data, double threshold = 0.5,
                       int batch_size = 100);

struct TrainHooks {
  /// Replaces the monitored value (validation AUC-PR) of an epoch.
  std::function<double(int epoch, double auc_pr)> monitor;
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::unique_ptr<ModelGraph> model;
  TrainReport report;
};

/// Epoch loop with seeded shuffling, per-epoch crops, validation AUC-PR
/// early stopping and best-state restore. Divergence ends the run with
/// report.diverged set (the model holds the best state seen so far).
TrainResult train(const ModelSpec& spec, const DatasetContainer& train_data,
                  const DatasetContainer& val_data, const TrainConfig& config, const TrainHooks& hooks = {});

/// Mean and coefficient of variation (sample std / mean, in percent).
struct ErrorRate {
  double mean = 0.0;
  double rate = 0.0;  // percent
  bool defined = true;  // false when mean is 0 or fewer than two values
};
ErrorRate error_rate(std::span<const double> values);
/// "0.2739 ± 3.14%"
std::string format_error_rate(const ErrorRate& e);

struct RunOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  std::optional<MetricSummary> test;
  TrainReport report;
};

struct SeedSummary {
  ModelSpec spec;
  std::vector<RunOutcome> runs;
  ErrorRate auc, auc_pr, precision, recall;  // over successful runs
};

/// Trains with seeds config.seed, config.seed+1, ... and aggregates test
/// metrics. Failed runs stay in `runs` with their reason.
SeedSummary seed_experiment(const ModelSpec& spec, const DatasetContainer& data, const TrainConfig& config,
                            int k_seeds = 3);
SeedSummary summarize_seeds(const ModelSpec& spec, std::vector<RunOutcome> runs);
/// Table 2 layout: Model plus four "metric ± error rate" columns.
std::string format_seed_table(const std::vector<SeedSummary>& rows);

inline constexpr std::array<double, 5> kFractions = {0.10, 0.25, 0.50, 0.75, 1.00};

struct FractionRow {
  double fraction = 1.0;
  ModelSpec spec;
  RunOutcome run;
  std::string train_ids, test_ids;
};

/// One training run per fraction on nested subsets; val/test stay fixed.
std::vector<FractionRow> fraction_experiment(const ModelSpec& spec, const DatasetContainer& data,
                                             const TrainConfig& config, std::span<const double> fractions);
/// Table 3 layout: Fraction, Model, AUC, AUC-PR, Precision, Recall.
std::string format_fraction_table(const std::vector<FractionRow>& rows);

}  // namespace wildfire
