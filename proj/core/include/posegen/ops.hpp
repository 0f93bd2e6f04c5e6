#pragma once

#include <array>
#include <vector>

#include "posegen/tensor.hpp"

namespace posegen {

// Token grid coordinate used by the rotary embedding: (t, y, x).
struct TokenPos {
    int32_t t = 0;
    int32_t y = 0;
    int32_t x = 0;
};

// Elementwise, same shape required (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor gelu(const Tensor& x);

// 2D linear algebra, row-major.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// Row-stabilized softmax over the last axis of a 2D tensor.
Tensor softmax_rows(const Tensor& x);

// Per-row RMS normalization with learnable gain, eps = 1e-6.
Tensor rms_norm(const Tensor& x, const Tensor& gain);

// Rotary position embedding over 3 axes. d must be divisible by 6; each
// axis owns d/6 adjacent pairs. Angles use base 10000 and are evaluated in
// double before rotation. Exactly identity at position (0,0,0).
Tensor rope_apply(const Tensor& x, const std::vector<TokenPos>& pos);

// Reductions to scalar shape {1}.
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Structural ops on 2D tensors.
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int64_t r0, int64_t rows);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t cols);
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // v broadcast over rows
Tensor reshape(const Tensor& x, Shape shape);         // same data, new extents

// Patch extraction for a rank-4 [C,f,h,w] tensor with kernel (1,2,2) and
// matching stride. Output is [f*(h/2)*(w/2), 4C]; column layout is
// channel-major: col = ch*4 + ky*2 + kx. fold_patches is the exact inverse.
Tensor unfold_patches(const Tensor& z);
Tensor fold_patches(const Tensor& x, int64_t C, int64_t f, int64_t h, int64_t w);

// Convenience, tape-free helpers.
float l2_diff(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace posegen
