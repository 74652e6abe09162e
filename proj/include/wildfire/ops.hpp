#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wildfire/tensor.hpp"

/// Differentiable operators. Every op records itself on the active tape
/// (see TapeScope) when at least one input requires grad; otherwise it is a
/// plain forward computation. Storage is float32, reductions accumulate in
/// float64. Any non-finite output raises NumericError.
namespace wildfire::ops {

enum class Mode { Train, Eval };

inline constexpr float kBatchNormMomentum = 0.9f;
inline constexpr float kNormEps = 1e-5f;
inline constexpr float kAttentionMaskValue = -1e9f;

// --- elementwise and reductions ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Σ weights[i]·x[i] with constant (untracked) weights; returns a scalar.
Tensor weighted_sum(const Tensor& x, std::span<const float> weights);
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, int axis);

// --- activations ----------------------------------------------------------

Tensor relu(const Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
/// Inverted dropout. Eval mode (or rate 0) returns `x` unchanged. The keep
/// mask for element i is a pure function of (key, i).
Tensor dropout(const Tensor& x, float rate, std::uint64_t key, Mode mode);

// --- convolution and pooling ----------------------------------------------

/// x: [N,Cin,H,W], kernel: [Cout,Cin,Kh,Kw], bias: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride, int padding);
/// x: [N,Cin,H,W], kernel: [Cin,Cout,Kh,Kw] (the conv2d kernel of the
/// adjoint map), bias: [Cout] or undefined. Output extent (H-1)·s - 2p + K.
Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
                        int padding);
/// 2×2 window, stride 2. Backward routes to the first maximal cell.
Tensor maxpool2d(const Tensor& x);

// --- normalization ----------------------------------------------------------

struct RunningStats {
  Tensor mean;
  Tensor var;
};

/// Per-channel normalization of [N,C,...]. Train mode uses batch statistics
/// and updates `stats` (running = momentum·running + (1-momentum)·batch,
/// unbiased batch variance); eval mode uses `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  Mode mode, float eps = kNormEps, float momentum = kBatchNormMomentum);
/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = kNormEps);

// --- dense and batched products ----------------------------------------------

/// x: [..., Din], weight: [Din, Dout], bias: [Dout] or undefined.
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// [B,M,K] x [B,K,N] -> [B,M,N]
Tensor bmm(const Tensor& a, const Tensor& b);
/// [B,M,K] x [B,N,K]^T -> [B,M,N]
Tensor bmm_nt(const Tensor& a, const Tensor& b);

// --- token-grid rearrangements (Swin) --------------------------------------

/// [N,C,H,W] -> [N,H·W,C]
Tensor nchw_to_tokens(const Tensor& x);
/// [N,H·W,C] -> [N,C,H,W]
Tensor tokens_to_nchw(const Tensor& x, Index height, Index width);
/// Cyclic shift on a side×side token grid: out[i,j] = in[(i+shift)%s, (j+shift)%s].
Tensor roll_grid(const Tensor& x, Index side, Index shift);
/// [N,s·s,D] -> [N·nW, w·w, D], windows in row-major order.
Tensor window_partition(const Tensor& x, Index side, Index window);
/// Inverse of window_partition.
Tensor window_reverse(const Tensor& x, Index side, Index window);
/// [B,t,3D] -> one of q/k/v as [B·heads, t, D/heads].
Tensor split_heads(const Tensor& qkv, int heads, int which);
/// [B·heads, t, dh] -> [B, t, heads·dh]
Tensor merge_heads(const Tensor& x, int heads);
/// scores [B·heads, t, t] plus constant mask [nW, t, t]; window of batch
/// row b is (b / heads) % nW.
Tensor add_window_mask(const Tensor& scores, const Tensor& mask, int heads);
/// Concatenates each 2×2 token group: [N,s·s,D] -> [N,(s/2)²,4D].
Tensor space_to_depth_tokens(const Tensor& x, Index side);
/// Inverse rearrangement: [N,s·s,4C] -> [N,(2s)²,C].
Tensor depth_to_space_tokens(const Tensor& x, Index side);

/// Additive mask for shifted windows: 0 inside a region, kAttentionMaskValue
/// for token pairs that the cyclic shift brought together. [nW, w², w²].
Tensor shifted_window_mask(Index side, Index window, Index shift);

struct AttentionWeights {
  Tensor qkv_weight;   // [D, 3D]
  Tensor qkv_bias;     // [3D]
  Tensor proj_weight;  // [D, D]
  Tensor proj_bias;    // [D]
};

/// (Shifted) window multi-head self-attention over [N, side², D] tokens.
Tensor window_attention(const Tensor& x, Index side, int heads, Index window, Index shift,
                        const AttentionWeights& weights);

/// Merge: 2×2 concat then dense [4D, 2D] (no bias).
Tensor patch_merge(const Tensor& x, Index side, const Tensor& weight);
/// Expand: dense [D, 2D] then rearrange to a 2× grid of D/2 features.
Tensor patch_expand(const Tensor& x, Index side, const Tensor& weight);

// --- loss ----------------------------------------------------------------------

struct LossResult {
  Tensor loss;
  Index unmasked = 0;
  bool all_masked = false;
};

/// Sigmoid cross-entropy averaged over pixels whose label is not -1.
/// logits: [N,1,H,W]; labels: [N,H,W] with values in {-1,0,1}.
LossResult masked_weighted_bce(const Tensor& logits, const Tensor& labels, float pos_weight);

}  // namespace wildfire::ops
