#pragma once

#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// All ops allocate fresh outputs and record backward closures on the active
// tape when recording is enabled and an input requires grad. Binary ops use
// trailing-dimension (right-aligned) broadcasting.

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor scale(const Tensor& x, float c);       // c * x
Tensor add_scalar(const Tensor& x, float c);  // x + c
Tensor square(const Tensor& x);

// ---- contraction ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [..,m,k] x [..,k,n], batch dims broadcast
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

// ---- reductions & shape ----
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor max(const Tensor& x, int axis, bool keepdim = false);
Tensor softmax(const Tensor& x, int axis);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor upsample_nearest2x(const Tensor& x);            // [B,C,H,W] -> [B,C,2H,2W]
Tensor avgpool2d(const Tensor& x, int k, int stride);  // [B,C,H,W]

// ---- normalization ----
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor groupnorm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                 float eps = 1e-5f);

// ---- lookup ----
Tensor embedding(const Tensor& table, const IndexArray& idx);  // [K,D] x idx -> [idx..,D]

// ---- gradient routing ----
Tensor stop_gradient(const Tensor& x);
Tensor straight_through(const Tensor& x, const Tensor& x_q);

// ---- attention ----
struct AttentionResult {
    Tensor out;
    Tensor weights;  // [B,heads,Tq,Tkv] post-softmax; defined only when requested
};
// q:[B,Tq,d] k,v:[B,Tkv,d]; per-head scaled dot-product, heads concatenated,
// then projected by w_out [d,d] (+ b_out [d] if defined). kv_mask, when
// defined, is [B,Tkv] with 1 = attend, 0 = masked out.
AttentionResult multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                                    const Tensor& w_out, const Tensor& b_out,
                                    const Tensor& kv_mask = Tensor(), bool want_weights = false);

// ---- conveniences ----
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l2_normalize_rows(const Tensor& x, float eps = 1e-12f);  // over last axis

}  // namespace glyphdiff
