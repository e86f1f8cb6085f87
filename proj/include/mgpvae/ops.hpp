#pragma once

// Differentiable operations used by the encoder, decoder and loss.
//
// Volumes are [C,D,H,W] or batched [B,C,D,H,W]; vectors are [F] or
// batched [B,F]. Scalars have shape [1].

#include <cstddef>

#include "mgpvae/tensor.hpp"

namespace mgpvae::ad {

/// 3x3x3 convolution, padding 1 on every spatial axis, stride 1 or 2.
/// weight [C_out,C_in,3,3,3], bias [C_out]. Output extent is ceil(extent/stride).
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride);

/// Nearest-neighbour x2 upsampling on the three trailing axes.
Tensor upsample_nearest3d(const Tensor& input);

/// ELU with alpha = 1.
Tensor elu(const Tensor& input);
Tensor softplus(const Tensor& input);
Tensor exp(const Tensor& input);
Tensor log(const Tensor& input);
Tensor square(const Tensor& input);

/// Affine map: input [F_in] or [B,F_in], weight [F_out,F_in], bias [F_out].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// a * b^T for a [m,k], b [n,k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Lower-triangular factor from an unconstrained square matrix: the strict
/// lower part is copied, the diagonal passes through softplus, the upper
/// part is zero.
Tensor lower_factor(const Tensor& raw);

Tensor reshape(const Tensor& input, Shape shape);
/// Columns [begin,end) of a [B,F] tensor.
Tensor slice_cols(const Tensor& input, std::size_t begin, std::size_t end);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

/// Sum of all entries (accumulated in double), shape [1].
Tensor sum(const Tensor& a);

}  // namespace mgpvae::ad
