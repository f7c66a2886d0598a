#pragma once

#include <vector>

#include "pmr/nn/tensor.hpp"

/// Differentiable operators on (T, H, W, C) activations.
namespace pmr::nn::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var gelu(const Var& x);
Var clamp01(const Var& x);

/// Pointwise channel mixing: out[..., o] = Σ_i W[o, i]·x[..., i] + b[o].
/// W has shape [Cout, Cin]; bias may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Grouped 3-D convolution over (t, y, x) with zero "same" padding.
/// Weight shape [Cout, kt, kh, kw, Cin/groups] (all kernel sides odd).
Var conv3d(const Var& x, const Var& weight, const Var& bias, int groups);

/// Per-position normalization over channels with affine gamma/beta [C].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int end);

/// One orthonormal Haar level per frame: (T,H,W,C) → (T,H/2,W/2,4C) with
/// channel blocks [LL | LH | HL | HH].
Var haar_down(const Var& x);
Var upsample_nearest2(const Var& x);
/// Bilinear resize of every frame with pixel-centre alignment.
Var resize_bilinear(const Var& x, int height, int width);

/// Backward bilinear warp of frame t by offsets[t] (shape (T,H,W,2)), with
/// border replication; differentiable in both arguments.
Var warp(const Var& x, const Var& offsets);

/// x_t − mean over t of x.
Var temporal_deviation(const Var& x);

/// Channel ("transposed") attention. qkv holds [Q | K | V] blocks of C
/// channels each; every head attends over its C/heads channels with a
/// (C/heads)² matrix aggregated over all T·H·W positions:
/// A = softmax(q̂ᵀ k̂ / τ_h), out = V·Aᵀ, where q̂, k̂ are L2-normalized over
/// positions. temperature has shape [heads]. When `attention_out` is
/// non-null it receives the per-head matrices.
Var channel_attention(const Var& qkv, const Var& temperature, int heads,
                      std::vector<Tensor>* attention_out = nullptr);

/// Trailing-window temporal blend with frozen mask and weights: pixels with
/// mask != 0 copy frame k, others take Σ_i w[i]·x[max(k−w+1+i, 0)].
Var temporal_blend(const Var& x, const std::vector<unsigned char>& mask,
                   const std::vector<double>& weights);

/// Sum of all elements as a single-element tensor.
Var sum(const Var& x);

/// mean sqrt((pred − target)² + eps²) over all elements.
Var charbonnier(const Var& pred, const Var& target, double eps = 1e-3);

// Non-differentiable helpers on plain tensors.
Tensor haar_forward(const Tensor& x);
Tensor haar_inverse(const Tensor& bands);

}  // namespace pmr::nn::ops
