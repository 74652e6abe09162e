#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "wildfire/checkpoint.hpp"
#include "wildfire/ops.hpp"
#include "wildfire/tensor.hpp"

namespace wildfire {

enum class Family { Autoencoder, ResEncoderDecoder, UNet, SwinUNet };

inline constexpr Family kAllFamilies[] = {Family::Autoencoder, Family::ResEncoderDecoder, Family::UNet,
                                          Family::SwinUNet};

/// "autoencoder", "resnet", "unet", "swin".
std::string_view family_key(Family f);
/// Table heading: "Autoencoder", "ResNet", "UNet", "Swin".
std::string_view family_label(Family f);
/// Accepts the key or label, case-insensitively. Unknown names throw
/// std::invalid_argument listing the four families.
Family parse_family(std::string_view name);

/// Positive rational width multiplier (1 = paper widths).
struct Width {
  std::int64_t num = 1, den = 1;
  /// base·w; throws std::invalid_argument unless it is an integer ≥ 1.
  Index scale(Index base) const;
  std::string str() const;
  static Width parse(std::string_view text);
  bool operator==(const Width&) const = default;
};

struct ModelSpec {
  Family family = Family::UNet;
  Width width;
  int window = 4;
  int heads = 2;
  float dropout = 0.1f;
  std::vector<int> blocks;  // residual blocks per stage (ResEncoderDecoder)
  int mlp_ratio = 4;
  bool shift_windows = true;  // false disables SW-MSA (ablation)

  /// Desk-scale defaults for a family.
  static ModelSpec desk(Family f);
  std::string to_json() const;
  /// Missing keys take the desk defaults of the named family.
  static ModelSpec from_json(std::string_view text);
  void validate() const;
};

/// Captures (and optionally replaces) the output of the first convolution.
struct ActivationProbe {
  Tensor activation;  // filled by forward
  Tensor replace;     // used instead of the computed activation when defined
};

struct ForwardOptions {
  ops::Mode mode = ops::Mode::Eval;
  std::uint64_t step = 0;  // keys dropout masks in train mode
  ActivationProbe* probe = nullptr;
  /// Zeroes the encoder->decoder skip of this level (skip-bearing families).
  int ablate_skip = -1;
};

// Layer handles. Tensors alias the graph's registered parameters.
struct Conv {
  Tensor weight, bias;  // bias may be undefined
  int stride = 1, pad = 0;
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};
struct ConvT {
  Tensor weight, bias;
  int stride = 2;
  Tensor operator()(const Tensor& x) const { return ops::conv2d_transpose(x, weight, bias, stride, 0); }
};
struct Norm {
  Tensor gamma, beta;
  ops::RunningStats stats;
  Tensor operator()(const Tensor& x, ops::Mode mode) const {
    ops::RunningStats s = stats;
    return ops::batch_norm(x, gamma, beta, s, mode);
  }
};
struct Dense {
  Tensor weight, bias;
  Tensor operator()(const Tensor& x) const { return ops::dense(x, weight, bias); }
};
struct LayerNorm {
  Tensor gamma, beta;
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
};

/// Bottleneck residual block: 1×1 reduce, 3×3 (strided), 1×1 expand, each
/// with batch norm; projection shortcut when the shape changes.
struct Bottleneck {
  Conv reduce, spatial, expand;
  Norm reduce_norm, spatial_norm, expand_norm;
  bool projected = false;
  Conv shortcut;
  Norm shortcut_norm;
  Tensor operator()(const Tensor& x, ops::Mode mode) const;
};

/// A built architecture. Forward maps [N,12,32,32] inputs to [N,1,32,32]
/// logits.
class ModelGraph {
 public:
  ModelGraph(ModelSpec spec, std::uint64_t seed);
  virtual ~ModelGraph() = default;
  ModelGraph(const ModelGraph&) = delete;
  ModelGraph& operator=(const ModelGraph&) = delete;

  Tensor forward(const Tensor& x, const ForwardOptions& options = {});

  const ModelSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Trainable tensors in registration order.
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  /// Non-trainable state (batch-norm running statistics).
  const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }
  /// Parameters followed by buffers, as written to a checkpoint.
  std::vector<NamedTensor> state() const;
  /// Copies values by name; every tensor must be present with its shape.
  void load_state(const std::vector<NamedTensor>& state);

  std::uint64_t param_count() const;
  /// FLOPs of one eval-mode forward pass on a single 12×32×32 input.
  std::uint64_t flop_estimate();

  /// Stops gradient tracking of parameters; train-mode forward then throws.
  void freeze();
  bool frozen() const noexcept { return frozen_; }

  /// Name of the weight of the first convolution (the Grad-CAM target).
  const std::string& first_conv() const noexcept { return first_conv_; }
  /// True for families that route encoder features directly to the decoder.
  virtual bool has_encoder_decoder_skips() const = 0;

 protected:
  virtual Tensor forward_impl(const Tensor& x, const ForwardOptions& options) = 0;

  Conv conv(const std::string& name, Index cin, Index cout, int k, int stride = 1, bool bias = true);
  ConvT conv_t(const std::string& name, Index cin, Index cout, int k = 2);
  Norm norm(const std::string& name, Index channels);
  Dense dense(const std::string& name, Index din, Index dout, bool bias = true);
  LayerNorm layer_norm(const std::string& name, Index dim);

  /// Initial 16-channel conv + ReLU shared by every family; reports to the
  /// probe.
  Tensor stem(const Conv& c, const Tensor& x, const ForwardOptions& options) const;
  std::uint64_t dropout_key(std::uint64_t step, int site) const;

 private:
  Tensor add_param(const std::string& name, Shape shape, double bound);
  Tensor add_fixed(std::vector<NamedTensor>& into, const std::string& name, Shape shape, float fill);

  ModelSpec spec_;
  std::uint64_t seed_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::uint64_t layer_index_ = 0;
  std::string first_conv_;
  bool frozen_ = false;
};

std::unique_ptr<ModelGraph> build_autoencoder(const ModelSpec& spec, std::uint64_t seed);
std::unique_ptr<ModelGraph> build_res_encoder_decoder(const ModelSpec& spec, std::uint64_t seed);
std::unique_ptr<ModelGraph> build_unet(const ModelSpec& spec, std::uint64_t seed);
std::unique_ptr<ModelGraph> build_swin_unet(const ModelSpec& spec, std::uint64_t seed);
std::unique_ptr<ModelGraph> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Residual blocks of a ResEncoderDecoder graph in execution order; empty
/// for other families.
std::vector<Bottleneck> residual_blocks(const ModelGraph& graph);

inline constexpr Index kStemChannels = 16;
inline constexpr Index kInputSide = 32;

}  // namespace wildfire
