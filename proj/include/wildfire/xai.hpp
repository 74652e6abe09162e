#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wildfire/dataio.hpp"
#include "wildfire/models.hpp"

namespace wildfire {

/// Differentiable map from inputs [N,12,H,W] to logits [N,1,H,W].
using LogitFn = std::function<Tensor(const Tensor&)>;
/// Eval-mode forward of a model.
LogitFn logits_of(ModelGraph& model);

// --- Shapley ---------------------------------------------------------------------

inline constexpr int kMaxExactPlayers = 16;

/// Cooperative game over `players` features; coalitions are bit masks.
struct Game {
  int players = 0;
  std::function<double(std::uint32_t)> value;
  /// Optional batched evaluation, used when present.
  std::function<std::vector<double>(std::span<const std::uint32_t>)> batch;
};

struct ShapleyResult {
  std::vector<double> phi;
  double v_empty = 0.0, v_full = 0.0;
  std::string method;  // "exact" or "gradient"
  std::uint64_t evaluations = 0;
};

/// Direct summation of weighted marginal contributions over all
/// coalitions, each coalition evaluated once. More than 16 players throws.
ShapleyResult exact_shapley(const Game& game);

enum class BaselinePolicy { Zeros, FeatureMean };

/// Per-channel replacement values in normalized input space. FeatureMean
/// maps each stats mean through the same normalization as the inputs.
std::array<float, kFeatureCount> baseline_values(BaselinePolicy policy, const FeatureStats& stats);

/// v(S): mean logit over `pixels` when the channels outside S are
/// replaced by the baseline.
class ValueFunction {
 public:
  ValueFunction(LogitFn model, Tensor input, std::vector<Index> pixels, std::array<float, kFeatureCount> baseline);
  double operator()(std::uint32_t coalition) const;
  std::vector<double> evaluate(std::span<const std::uint32_t> coalitions) const;
  Game game() const;
  const std::vector<Index>& pixels() const noexcept { return pixels_; }

 private:
  LogitFn model_;
  Tensor input_;  // [1,12,H,W]
  std::vector<Index> pixels_;
  std::array<float, kFeatureCount> baseline_;
};

struct GradientShapResult {
  std::array<double, kFeatureCount> mean_abs{};  // mean |attribution| per pixel
  std::array<double, kFeatureCount> totals{};    // signed sum over pixels, averaged over samples
  std::vector<std::pair<std::string, double>> ranking;  // by mean_abs, descending
  int draws = 0;
};

/// Expected-gradients estimator of F = mean logit over `pixels` (all
/// pixels when empty). Draw d uses background row perm[d mod B] of one
/// seeded permutation and λ ~ U(0,1).
GradientShapResult gradient_shap(const LogitFn& model, const Tensor& samples, const Tensor& background,
                                 int n_draws, std::uint64_t seed, const std::vector<Index>& pixels = {});

// --- SEG-Grad-CAM --------------------------------------------------------------------

struct CamHeatmap {
  Index height = 0, width = 0;  // activation grid
  std::vector<float> weights;   // w_k per channel
  std::vector<std::vector<float>> channels;  // ReLU(w_k·A^k)
  std::vector<float> combined;  // ReLU(Σ_k w_k·A^k)
  std::vector<Index> pixels;    // the set M on the output grid
  Index out_size = 0;
  std::vector<std::vector<float>> channels_up;  // bilinear to out_size²
  std::vector<float> combined_up;
};

/// Heatmaps from activations A and dy/dA, both [C,H,W].
CamHeatmap cam_from_gradients(const Tensor& activation, const Tensor& gradient, Index out_size = kInputSide);

/// Pixels whose predicted probability exceeds 0.5, or every pixel when
/// none does.
std::vector<Index> default_pixel_set(std::span<const float> logits);

/// Target = first convolution. `pixels` empty selects default_pixel_set.
/// Throws std::invalid_argument when the layer does not have 16 channels.
CamHeatmap seg_grad_cam(ModelGraph& model, const Tensor& input, std::vector<Index> pixels = {});

/// Bilinear resize of an h×w grid (half-pixel centres, edge clamped).
std::vector<float> bilinear_resize(std::span<const float> grid, Index h, Index w, Index out_h, Index out_w);

// --- Integrated Gradients ---------------------------------------------------------------

inline constexpr int kDefaultIgSteps = 128;

struct PcrResult {
  std::array<double, kFeatureCount> ratios{};
  bool degenerate = false;  // no positive total
};

/// max(γ,0) / Σ max(γ,0).
PcrResult pcr(std::span<const double> gamma);

struct IgAttribution {
  std::vector<float> attributions;  // [12,H,W]
  std::array<double, kFeatureCount> gamma{};
  PcrResult pcr;
  double f_input = 0.0, f_baseline = 0.0;
  double gap = 0.0;  // |Σ attributions − (F(x) − F(x'))|
  int steps = 0;
};

/// Midpoint rule with λ = (t−½)/m, F = sum of logits over all pixels,
/// zero baseline.
IgAttribution integrated_gradients(const LogitFn& model, const Tensor& input, int steps = kDefaultIgSteps);

// --- bundles ---------------------------------------------------------------------------

struct ExplainMethods {
  bool shap = true, gradcam = true, ig = true;
  static ExplainMethods parse(std::string_view list);  // "shap,gradcam,ig"
};

struct ModelPanel {
  std::string model;
  bool trained = true;
  std::vector<float> prediction;  // 0/1 predicted fire mask
  std::optional<CamHeatmap> cam;
  std::optional<IgAttribution> ig;
  std::optional<ShapleyResult> shap;
};

struct ExplanationBundle {
  std::size_t sample_id = 0;
  Index side = 0;
  std::vector<ModelPanel> panels;
};

struct ExplainModel {
  ModelGraph* model = nullptr;
  bool trained = true;
};

/// Input of one sample as the models see it (fixed evaluation crop,
/// normalized), [1,12,32,32], with its label grid.
Batch explain_input(const DatasetContainer& data, std::size_t id);

ExplanationBundle explain_sample(std::span<const ExplainModel> models, const DatasetContainer& data,
                                 std::size_t id, const ExplainMethods& methods, int ig_steps = kDefaultIgSteps);

/// 8-bit binary PGM after min-max scaling (a constant grid maps to 0).
std::string encode_pgm(std::span<const float> grid, Index height, Index width);
/// Sidecar with the raw value range of a PGM.
std::string pgm_sidecar(std::span<const float> grid, Index height, Index width);

/// Writes the bundle under `dir`; returns the written paths in order.
std::vector<std::filesystem::path> write_bundle(const ExplanationBundle& bundle, const std::filesystem::path& dir);

}  // namespace wildfire
