#include "glyphdiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <cblas.h>
#include <omp.h>

extern "C" void openblas_set_num_threads(int);

namespace glyphdiff {

namespace {

struct BlasInit {
    BlasInit() {
        // GEMM calls are single-threaded; parallelism happens at the batch
        // level where every output slice has exactly one writer.
        openblas_set_num_threads(1);
    }
} g_blas_init;

constexpr int64_t kParallelCutoff = 1 << 15;

std::vector<float>& ensure_grad(TensorImpl* t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0f);
    return t->grad;
}

bool want_tape(std::initializer_list<const Tensor*> inputs) {
    if (!grad_recording_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Row-chunked GEMM: each C row is produced by exactly one sgemm call with a
// fixed accumulation order, so values do not depend on the thread count.
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
    const int threads = omp_get_max_threads();
    if (threads > 1 && !omp_in_parallel() && m >= 2 * threads && m * n * k >= (int64_t{1} << 16)) {
#pragma omp parallel for schedule(static)
        for (int t = 0; t < threads; ++t) {
            int64_t r0 = m * t / threads, r1 = m * (t + 1) / threads;
            if (r0 >= r1) continue;
            const float* ab = ta ? a + r0 : a + r0 * lda;
            cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                        tb ? CblasTrans : CblasNoTrans, static_cast<int>(r1 - r0),
                        static_cast<int>(n), static_cast<int>(k), alpha, ab, static_cast<int>(lda),
                        b, static_cast<int>(ldb), beta, c + r0 * ldc, static_cast<int>(ldc));
        }
        return;
    }
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// ---- broadcasting ----

Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t n = std::max(a.size(), b.size());
    Shape out(n);
    for (size_t i = 0; i < n; ++i) {
        int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
        int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` right-aligned into `out`, 0 on broadcast dims.
std::vector<int64_t> bc_strides(const Shape& out, const Shape& s) {
    size_t n = out.size(), m = s.size();
    std::vector<int64_t> natural(m);
    int64_t acc = 1;
    for (size_t i = m; i-- > 0;) {
        natural[i] = acc;
        acc *= s[i];
    }
    std::vector<int64_t> st(n, 0);
    for (size_t i = 0; i < n; ++i) {
        if (i >= n - m) {
            size_t j = i - (n - m);
            if (s[j] != 1) st[i] = natural[j];
        }
    }
    return st;
}

template <class Fn>
void for_each_bc2(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb,
                  Fn&& fn) {
    const int r = static_cast<int>(out.size());
    const int64_t n = shape_numel(out);
    if (r == 0) {
        fn(int64_t{0}, int64_t{0}, int64_t{0});
        return;
    }
    std::vector<int64_t> coord(static_cast<size_t>(r), 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0;;) {
        fn(i, ia, ib);
        if (++i >= n) break;
        for (int d = r - 1; d >= 0; --d) {
            ++coord[static_cast<size_t>(d)];
            ia += sa[static_cast<size_t>(d)];
            ib += sb[static_cast<size_t>(d)];
            if (coord[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
            ia -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            ib -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            coord[static_cast<size_t>(d)] = 0;
        }
    }
}

// fwd: (av, bv) -> out; bwd: (go, av, bv, ov, ga&, gb&) adds contributions
template <class FwdF, class BwdF>
Tensor binary_impl(const Tensor& a, const Tensor& b, FwdF fwd, BwdF bwd) {
    const bool same = a.shape() == b.shape();
    Shape out_shape = same ? a.shape() : broadcast_shape(a.shape(), b.shape());
    Tensor out = make_tensor(out_shape, want_tape({&a, &b}));

    std::vector<int64_t> sa, sb;
    if (same) {
        const float* pa = a.data();
        const float* pb = b.data();
        float* po = out.data();
        const int64_t n = out.numel();
        if (n >= kParallelCutoff && !omp_in_parallel()) {
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
        } else {
            for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
        }
    } else {
        sa = bc_strides(out_shape, a.shape());
        sb = bc_strides(out_shape, b.shape());
        const float* pa = a.data();
        const float* pb = b.data();
        float* po = out.data();
        for_each_bc2(out_shape, sa, sb,
                     [&](int64_t i, int64_t ia, int64_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
    }

    if (out.requires_grad()) {
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        bool ga_on = a.requires_grad(), gb_on = b.requires_grad();
        Shape os = out_shape;
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* pa = ai->data.data();
            const float* pb = bi->data.data();
            const float* po = oi->data.data();
            float* ga = ga_on ? ensure_grad(ai.get()).data() : nullptr;
            float* gb = gb_on ? ensure_grad(bi.get()).data() : nullptr;
            if (sa.empty() && sb.empty()) {
                const int64_t n = static_cast<int64_t>(oi->data.size());
                float dummy = 0;
                if (n >= kParallelCutoff && !omp_in_parallel()) {
#pragma omp parallel for schedule(static)
                    for (int64_t i = 0; i < n; ++i) {
                        float local_dummy = 0;
                        bwd(go[i], pa[i], pb[i], po[i], ga ? ga[i] : local_dummy,
                            gb ? gb[i] : local_dummy);
                    }
                } else {
                    for (int64_t i = 0; i < n; ++i)
                        bwd(go[i], pa[i], pb[i], po[i], ga ? ga[i] : dummy, gb ? gb[i] : dummy);
                }
            } else {
                float dummy = 0;
                for_each_bc2(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
                    bwd(go[i], pa[ia], pb[ib], po[i], ga ? ga[ia] : dummy, gb ? gb[ib] : dummy);
                });
            }
        });
    }
    return out;
}

template <class FwdF, class BwdF>
Tensor unary_impl(const Tensor& x, FwdF fwd, BwdF bwd) {
    Tensor out = make_tensor(x.shape(), want_tape({&x}));
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.numel();
    if (n >= kParallelCutoff && !omp_in_parallel()) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    } else {
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    }

    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* pv = xi->data.data();
            const float* pq = oi->data.data();
            float* gx = ensure_grad(xi.get()).data();
            const int64_t m = static_cast<int64_t>(xi->data.size());
            if (m >= kParallelCutoff && !omp_in_parallel()) {
#pragma omp parallel for schedule(static)
                for (int64_t i = 0; i < m; ++i) gx[i] += bwd(go[i], pv[i], pq[i]);
            } else {
                for (int64_t i = 0; i < m; ++i) gx[i] += bwd(go[i], pv[i], pq[i]);
            }
        });
    }
    return out;
}

void check_nonnegative(const Tensor& x, const char* op) {
    const float* p = x.data();
    for (int64_t i = 0; i < x.numel(); ++i)
        if (p[i] < 0.0f) throw DomainError(std::string(op) + ": negative input");
}

int norm_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
    return axis;
}

// outer/axis/inner decomposition for axis reductions
struct AxisSplit {
    int64_t outer, len, inner;
};
AxisSplit axis_split(const Shape& s, int axis) {
    AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
    Shape out = s;
    if (keepdim)
        out[static_cast<size_t>(axis)] = 1;
    else
        out.erase(out.begin() + axis);
    return out;
}

Tensor softmax_last(const Tensor& x) {
    const int64_t cols = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / cols;
    Tensor out = make_tensor(x.shape(), want_tape({&x}));
    const float* px = x.data();
    float* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = px + r * cols;
        float* orow = po + r * cols;
        float m = row[0];
        for (int64_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            orow[j] = std::exp(row[j] - m);
            s += orow[j];
        }
        const float inv = static_cast<float>(1.0 / s);
        for (int64_t j = 0; j < cols; ++j) orow[j] *= inv;
    }
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* y = oi->data.data();
            float* gx = ensure_grad(xi.get()).data();
            for (int64_t r = 0; r < rows; ++r) {
                const float* gr = go + r * cols;
                const float* yr = y + r * cols;
                float* gxr = gx + r * cols;
                double dot = 0.0;
                for (int64_t j = 0; j < cols; ++j) dot += static_cast<double>(gr[j]) * yr[j];
                const float d = static_cast<float>(dot);
                for (int64_t j = 0; j < cols; ++j) gxr[j] += yr[j] * (gr[j] - d);
            }
        });
    }
    return out;
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_impl(
        a, b, [](float x, float y) { return x + y; },
        [](float go, float, float, float, float& ga, float& gb) {
            ga += go;
            gb += go;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_impl(
        a, b, [](float x, float y) { return x - y; },
        [](float go, float, float, float, float& ga, float& gb) {
            ga += go;
            gb -= go;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_impl(
        a, b, [](float x, float y) { return x * y; },
        [](float go, float av, float bv, float, float& ga, float& gb) {
            ga += go * bv;
            gb += go * av;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_impl(
        a, b, [](float x, float y) { return x / y; },
        [](float go, float, float bv, float ov, float& ga, float& gb) {
            ga += go / bv;
            gb -= go * ov / bv;
        });
}

Tensor relu(const Tensor& x) {
    return unary_impl(
        x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float go, float v, float) { return v > 0.0f ? go : 0.0f; });
}

Tensor silu(const Tensor& x) {
    return unary_impl(
        x,
        [](float v) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return v * s;
        },
        [](float go, float v, float) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return go * s * (1.0f + v * (1.0f - s));
        });
}

Tensor exp(const Tensor& x) {
    return unary_impl(
        x, [](float v) { return std::exp(v); },
        [](float go, float, float ov) { return go * ov; });
}

Tensor log(const Tensor& x) {
    check_nonnegative(x, "log");
    return unary_impl(
        x, [](float v) { return std::log(v); },
        [](float go, float v, float) { return go / v; });
}

Tensor sqrt(const Tensor& x) {
    check_nonnegative(x, "sqrt");
    return unary_impl(
        x, [](float v) { return std::sqrt(v); },
        [](float go, float, float ov) { return ov > 0.0f ? go * 0.5f / ov : 0.0f; });
}

Tensor scale(const Tensor& x, float c) {
    return unary_impl(
        x, [c](float v) { return c * v; }, [c](float go, float, float) { return go * c; });
}

Tensor add_scalar(const Tensor& x, float c) {
    return unary_impl(
        x, [c](float v) { return v + c; }, [](float go, float, float) { return go; });
}

Tensor square(const Tensor& x) {
    return unary_impl(
        x, [](float v) { return v * v; },
        [](float go, float v, float) { return go * 2.0f * v; });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul requires rank >= 2");
    const int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const int64_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != k2)
        throw ShapeError("matmul inner mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

    Shape ba(a.shape().begin(), a.shape().end() - 2);
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    Shape batch = broadcast_shape(ba, bb);
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    Tensor out = make_tensor(out_shape, want_tape({&a, &b}));
    const int64_t nbatch = shape_numel(batch);
    auto sa = bc_strides(batch, ba);
    auto sb = bc_strides(batch, bb);
    // batch strides in units of one matrix
    std::vector<int64_t> offa(static_cast<size_t>(nbatch)), offb(static_cast<size_t>(nbatch));
    for_each_bc2(batch, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
        offa[static_cast<size_t>(i)] = ia * m * k;
        offb[static_cast<size_t>(i)] = ib * k * n;
    });

    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    if (nbatch == 1) {
        gemm(false, false, m, n, k, 1.0f, pa + offa[0], k, pb + offb[0], n, 0.0f, po, n);
    } else {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < nbatch; ++i)
            gemm(false, false, m, n, k, 1.0f, pa + offa[static_cast<size_t>(i)], k,
                 pb + offb[static_cast<size_t>(i)], n, 0.0f, po + i * m * n, n);
    }

    if (out.requires_grad()) {
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        bool ga_on = a.requires_grad(), gb_on = b.requires_grad();
        // with no broadcasting each input slice has exactly one writer and the
        // batch loop can run in parallel; otherwise accumulate sequentially
        const bool a_unique = shape_numel(ba) == nbatch;
        const bool b_unique = shape_numel(bb) == nbatch;
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            if (ga_on) {
                float* ga = ensure_grad(ai.get()).data();
                if (a_unique && nbatch > 1) {
#pragma omp parallel for schedule(static)
                    for (int64_t i = 0; i < nbatch; ++i)
                        gemm(false, true, m, k, n, 1.0f, go + i * m * n, n,
                             bi->data.data() + offb[static_cast<size_t>(i)], n, 1.0f,
                             ga + offa[static_cast<size_t>(i)], k);
                } else {
                    for (int64_t i = 0; i < nbatch; ++i)
                        gemm(false, true, m, k, n, 1.0f, go + i * m * n, n,
                             bi->data.data() + offb[static_cast<size_t>(i)], n, 1.0f,
                             ga + offa[static_cast<size_t>(i)], k);
                }
            }
            if (gb_on) {
                float* gb = ensure_grad(bi.get()).data();
                if (nbatch > 1 && a_unique && shape_numel(bb) == 1) {
                    // fully shared rhs (e.g. a weight matrix): one stacked gemm
                    gemm(true, false, k, n, nbatch * m, 1.0f, ai->data.data(), k, go, n, 1.0f, gb,
                         n);
                } else if (b_unique && nbatch > 1) {
#pragma omp parallel for schedule(static)
                    for (int64_t i = 0; i < nbatch; ++i)
                        gemm(true, false, k, n, m, 1.0f,
                             ai->data.data() + offa[static_cast<size_t>(i)], k, go + i * m * n, n,
                             1.0f, gb + offb[static_cast<size_t>(i)], n);
                } else {
                    for (int64_t i = 0; i < nbatch; ++i)
                        gemm(true, false, k, n, m, 1.0f,
                             ai->data.data() + offa[static_cast<size_t>(i)], k, go + i * m * n, n,
                             1.0f, gb + offb[static_cast<size_t>(i)], n);
                }
            }
        });
    }
    return out;
}

// ---- conv2d ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d expects [B,C,H,W] and [O,C,kh,kw]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(0), Cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (C != Cw) throw ShapeError("conv2d channel mismatch");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw ShapeError("conv2d kernel larger than padded input");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
        throw ShapeError("conv2d bias must be [O]");
    const int64_t OH = (H + 2 * padding - kh) / stride + 1;
    const int64_t OW = (W + 2 * padding - kw) / stride + 1;
    const int64_t P = OH * OW, CKK = C * kh * kw;

    Tensor out = make_tensor({B, O, OH, OW}, want_tape({&x, &w, &bias}));

    // column matrix per image, kept for the backward pass
    auto col = std::make_shared<std::vector<float>>(static_cast<size_t>(B * P * CKK));
    const float* px = x.data();
    const float* pw = w.data();
    float* po = out.data();
    const float* pbias = bias.defined() ? bias.data() : nullptr;

#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        float* colb = col->data() + b * P * CKK;
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
                float* row = colb + (oy * OW + ox) * CKK;
                for (int64_t c = 0; c < C; ++c) {
                    const float* xc = px + ((b * C + c) * H) * W;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride + ky - padding;
                        if (iy >= 0 && iy < H && ox * stride - padding >= 0 &&
                            ox * stride - padding + kw <= W) {
                            const float* src = xc + iy * W + ox * stride - padding;
                            float* dst = row + (c * kh + ky) * kw;
                            for (int64_t kx = 0; kx < kw; ++kx) dst[kx] = src[kx];
                            continue;
                        }
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride + kx - padding;
                            row[(c * kh + ky) * kw + kx] =
                                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xc[iy * W + ix] : 0.0f;
                        }
                    }
                }
            }
        }
    }
    // one batched gemm, then a layout pass [B,P,O] -> [B,O,P]
    std::vector<float> y(static_cast<size_t>(B * P * O));
    gemm(false, true, B * P, O, CKK, 1.0f, col->data(), CKK, pw, CKK, 0.0f, y.data(), O);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        const float* yb = y.data() + b * P * O;
        float* ob = po + b * O * P;
        for (int64_t o = 0; o < O; ++o) {
            const float bv = pbias ? pbias[o] : 0.0f;
            for (int64_t i = 0; i < P; ++i) ob[o * P + i] = yb[i * O + o] + bv;
        }
    }

    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), wi = w.impl_ptr(), oi = out.impl_ptr();
        auto bji = bias.defined() ? bias.impl_ptr() : nullptr;
        bool gx_on = x.requires_grad(), gw_on = w.requires_grad();
        bool gb_on = bias.defined() && bias.requires_grad();
        int s = stride, p = padding;
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();  // [B,O,P]
            if (gw_on) {
                // stack dY as [B*P, O] once, then dW accumulates in one gemm
                std::vector<float> dy(static_cast<size_t>(B * P * O));
#pragma omp parallel for schedule(static)
                for (int64_t b = 0; b < B; ++b) {
                    const float* gb = go + b * O * P;
                    float* dyb = dy.data() + b * P * O;
                    for (int64_t o = 0; o < O; ++o)
                        for (int64_t i = 0; i < P; ++i) dyb[i * O + o] = gb[o * P + i];
                }
                float* gw = ensure_grad(wi.get()).data();
                gemm(true, false, O, CKK, B * P, 1.0f, dy.data(), O, col->data(), CKK, 1.0f, gw,
                     CKK);
            }
            if (gb_on) {
                float* gbuf = ensure_grad(bji.get()).data();
                for (int64_t o = 0; o < O; ++o) {
                    double acc = 0.0;
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t i = 0; i < P; ++i)
                            acc += go[(b * O + o) * P + i];
                    gbuf[o] += static_cast<float>(acc);
                }
            }
            if (gx_on) {
                float* gx = ensure_grad(xi.get()).data();
                const float* pw2 = wi->data.data();
#pragma omp parallel for schedule(static)
                for (int64_t b = 0; b < B; ++b) {
                    std::vector<float> dcol(static_cast<size_t>(P * CKK));
                    gemm(true, false, P, CKK, O, 1.0f, go + b * O * P, P, pw2, CKK, 0.0f,
                         dcol.data(), CKK);
                    for (int64_t oy = 0; oy < OH; ++oy)
                        for (int64_t ox = 0; ox < OW; ++ox) {
                            const float* row = dcol.data() + (oy * OW + ox) * CKK;
                            for (int64_t c = 0; c < C; ++c) {
                                float* gxc = gx + ((b * C + c) * H) * W;
                                for (int64_t ky = 0; ky < kh; ++ky) {
                                    const int64_t iy = oy * s + ky - p;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int64_t kx = 0; kx < kw; ++kx) {
                                        const int64_t ix = ox * s + kx - p;
                                        if (ix < 0 || ix >= W) continue;
                                        gxc[iy * W + ix] += row[(c * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                }
            }
        });
    }
    return out;
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    Tensor out = make_tensor({}, want_tape({&x}));
    double acc = 0.0;
    const float* p = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += p[i];
    out.data()[0] = static_cast<float>(acc);
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float g = oi->grad[0];
            float* gx = ensure_grad(xi.get()).data();
            for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    axis = norm_axis(axis, x.rank());
    const AxisSplit sp = axis_split(x.shape(), axis);
    Tensor out = make_tensor(reduced_shape(x.shape(), axis, keepdim), want_tape({&x}));
    const float* p = x.data();
    float* po = out.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t in = 0; in < sp.inner; ++in) {
            double acc = 0.0;
            for (int64_t j = 0; j < sp.len; ++j) acc += p[(o * sp.len + j) * sp.inner + in];
            po[o * sp.inner + in] = static_cast<float>(acc);
        }
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gx = ensure_grad(xi.get()).data();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t j = 0; j < sp.len; ++j)
                    for (int64_t in = 0; in < sp.inner; ++in)
                        gx[(o * sp.len + j) * sp.inner + in] += go[o * sp.inner + in];
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const float inv = 1.0f / static_cast<float>(x.numel());
    Tensor out = make_tensor({}, want_tape({&x}));
    double acc = 0.0;
    const float* p = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += p[i];
    out.data()[0] = static_cast<float>(acc) * inv;
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float g = oi->grad[0] * inv;
            float* gx = ensure_grad(xi.get()).data();
            for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    axis = norm_axis(axis, x.rank());
    const float inv = 1.0f / static_cast<float>(x.dim(axis));
    Tensor s = sum(x, axis, keepdim);
    return scale(s, inv);
}

Tensor max(const Tensor& x, int axis, bool keepdim) {
    axis = norm_axis(axis, x.rank());
    const AxisSplit sp = axis_split(x.shape(), axis);
    Tensor out = make_tensor(reduced_shape(x.shape(), axis, keepdim), want_tape({&x}));
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(sp.outer * sp.inner));
    const float* p = x.data();
    float* po = out.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t in = 0; in < sp.inner; ++in) {
            float best = p[o * sp.len * sp.inner + in];
            int64_t bj = 0;
            for (int64_t j = 1; j < sp.len; ++j) {
                const float v = p[(o * sp.len + j) * sp.inner + in];
                if (v > best) {
                    best = v;
                    bj = j;
                }
            }
            po[o * sp.inner + in] = best;
            (*arg)[static_cast<size_t>(o * sp.inner + in)] = bj;
        }
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gx = ensure_grad(xi.get()).data();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t j = (*arg)[static_cast<size_t>(o * sp.inner + in)];
                    gx[(o * sp.len + j) * sp.inner + in] += go[o * sp.inner + in];
                }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    axis = norm_axis(axis, x.rank());
    if (axis == x.rank() - 1) return softmax_last(x);
    std::vector<int> perm(static_cast<size_t>(x.rank()));
    for (int i = 0; i < x.rank(); ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(axis)], perm[static_cast<size_t>(x.rank() - 1)]);
    return transpose(softmax_last(transpose(x, perm)), perm);
}

// ---- shape ops ----

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(new_shape));
    Tensor out = make_tensor(std::move(new_shape), want_tape({&x}));
    std::memcpy(out.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(float));
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            float* gx = ensure_grad(xi.get()).data();
            const float* go = oi->grad.data();
            for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += go[i];
        });
    }
    return out;
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("transpose: perm rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) throw ShapeError("transpose: bad perm");
        seen[static_cast<size_t>(p)] = true;
    }
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);

    // stride of output dim i in the input
    std::vector<int64_t> xstr(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
        xstr[static_cast<size_t>(i)] = xstr[static_cast<size_t>(i + 1)] * x.dim(i + 1);
    std::vector<int64_t> map(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) map[static_cast<size_t>(i)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    Tensor out = make_tensor(out_shape, want_tape({&x}));
    const float* px = x.data();
    float* po = out.data();
    const int64_t n = x.numel();
    if (r == 0) {
        po[0] = px[0];
    } else {
        std::vector<int64_t> coord(static_cast<size_t>(r), 0);
        int64_t ix = 0;
        for (int64_t i = 0;;) {
            po[i] = px[ix];
            if (++i >= n) break;
            for (int d = r - 1; d >= 0; --d) {
                ++coord[static_cast<size_t>(d)];
                ix += map[static_cast<size_t>(d)];
                if (coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
                ix -= map[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
                coord[static_cast<size_t>(d)] = 0;
            }
        }
    }
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            float* gx = ensure_grad(xi.get()).data();
            const float* go = oi->grad.data();
            const int64_t nn = static_cast<int64_t>(oi->data.size());
            std::vector<int64_t> coord(static_cast<size_t>(r), 0);
            int64_t ix = 0;
            for (int64_t i = 0;;) {
                gx[ix] += go[i];
                if (++i >= nn) break;
                for (int d = r - 1; d >= 0; --d) {
                    ++coord[static_cast<size_t>(d)];
                    ix += map[static_cast<size_t>(d)];
                    if (coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
                    ix -= map[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
                    coord[static_cast<size_t>(d)] = 0;
                }
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const int r = xs[0].rank();
    axis = norm_axis(axis, r);
    int64_t axis_total = 0;
    for (const Tensor& t : xs) {
        if (t.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && t.dim(i) != xs[0].dim(i)) throw ShapeError("concat: ragged shapes");
        axis_total += t.dim(axis);
    }
    Shape out_shape = xs[0].shape();
    out_shape[static_cast<size_t>(axis)] = axis_total;

    bool rg = false;
    for (const Tensor& t : xs) rg = rg || t.requires_grad();
    Tensor out = make_tensor(out_shape, grad_recording_enabled() && rg);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];

    float* po = out.data();
    int64_t off = 0;
    for (const Tensor& t : xs) {
        const int64_t len = t.dim(axis) * inner;
        const float* pt = t.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(po + o * axis_total * inner + off, pt + o * len,
                        static_cast<size_t>(len) * sizeof(float));
        off += len;
    }

    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        std::vector<int64_t> lens;
        for (const Tensor& t : xs) {
            impls.push_back(t.impl_ptr());
            lens.push_back(t.dim(axis) * inner);
        }
        auto oi = out.impl_ptr();
        int64_t at = axis_total;
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            int64_t off2 = 0;
            for (size_t j = 0; j < impls.size(); ++j) {
                if (impls[j]->requires_grad) {
                    float* gx = ensure_grad(impls[j].get()).data();
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t i = 0; i < lens[j]; ++i)
                            gx[o * lens[j] + i] += go[o * at * inner + off2 + i];
                }
                off2 += lens[j];
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    axis = norm_axis(axis, x.rank());
    if (start < 0 || len <= 0 || start + len > x.dim(axis)) throw ShapeError("slice out of bounds");
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out = make_tensor(out_shape, want_tape({&x}));

    const AxisSplit sp = axis_split(x.shape(), axis);
    const float* px = x.data();
    float* po = out.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(po + o * len * sp.inner, px + (o * sp.len + start) * sp.inner,
                    static_cast<size_t>(len * sp.inner) * sizeof(float));

    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gx = ensure_grad(xi.get()).data();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < len * sp.inner; ++i)
                    gx[(o * sp.len + start) * sp.inner + i] += go[o * len * sp.inner + i];
        });
    }
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2x expects [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = make_tensor({B, C, 2 * H, 2 * W}, want_tape({&x}));
    const float* px = x.data();
    float* po = out.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const float* in = px + bc * H * W;
        float* o = po + bc * 4 * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xc = 0; xc < W; ++xc) {
                const float v = in[y * W + xc];
                o[(2 * y) * 2 * W + 2 * xc] = v;
                o[(2 * y) * 2 * W + 2 * xc + 1] = v;
                o[(2 * y + 1) * 2 * W + 2 * xc] = v;
                o[(2 * y + 1) * 2 * W + 2 * xc + 1] = v;
            }
    }
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gx = ensure_grad(xi.get()).data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const float* g = go + bc * 4 * H * W;
                float* gi = gx + bc * H * W;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t xc = 0; xc < W; ++xc)
                        gi[y * W + xc] += g[(2 * y) * 2 * W + 2 * xc] +
                                          g[(2 * y) * 2 * W + 2 * xc + 1] +
                                          g[(2 * y + 1) * 2 * W + 2 * xc] +
                                          g[(2 * y + 1) * 2 * W + 2 * xc + 1];
            }
        });
    }
    return out;
}

Tensor avgpool2d(const Tensor& x, int k, int stride) {
    if (x.rank() != 4) throw ShapeError("avgpool2d expects [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k > H || k > W) throw ShapeError("avgpool2d window larger than input");
    const int64_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    const float inv = 1.0f / static_cast<float>(k * k);
    Tensor out = make_tensor({B, C, OH, OW}, want_tape({&x}));
    const float* px = x.data();
    float* po = out.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const float* in = px + bc * H * W;
        float* o = po + bc * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox) {
                double acc = 0.0;
                for (int64_t ky = 0; ky < k; ++ky)
                    for (int64_t kx = 0; kx < k; ++kx)
                        acc += in[(oy * stride + ky) * W + ox * stride + kx];
                o[oy * OW + ox] = static_cast<float>(acc) * inv;
            }
    }
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        int st = stride;
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gx = ensure_grad(xi.get()).data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const float* g = go + bc * OH * OW;
                float* gi = gx + bc * H * W;
                for (int64_t oy = 0; oy < OH; ++oy)
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const float gv = g[oy * OW + ox] * inv;
                        for (int64_t ky = 0; ky < k; ++ky)
                            for (int64_t kx = 0; kx < k; ++kx)
                                gi[(oy * st + ky) * W + ox * st + kx] += gv;
                    }
            }
        });
    }
    return out;
}

// ---- normalization ----

namespace {

// shared core: normalize `rows` groups of `n` contiguous values
struct NormStats {
    std::vector<float> xhat;
    std::vector<float> inv_std;
};

void norm_forward(const float* x, int64_t rows, int64_t n, float eps, NormStats& st) {
    st.xhat.resize(static_cast<size_t>(rows * n));
    st.inv_std.resize(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x + r * n;
        double mu = 0.0;
        for (int64_t i = 0; i < n; ++i) mu += xr[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = xr[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const float inv = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        st.inv_std[static_cast<size_t>(r)] = inv;
        float* xh = st.xhat.data() + r * n;
        const float muf = static_cast<float>(mu);
        for (int64_t i = 0; i < n; ++i) xh[i] = (xr[i] - muf) * inv;
    }
}

// dx for one group given dxhat
void norm_backward_group(const float* dxhat, const float* xhat, float inv, int64_t n, float* dx) {
    double s1 = 0.0, s2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        s1 += dxhat[i];
        s2 += static_cast<double>(dxhat[i]) * xhat[i];
    }
    const float m1 = static_cast<float>(s1 / static_cast<double>(n));
    const float m2 = static_cast<float>(s2 / static_cast<double>(n));
    for (int64_t i = 0; i < n; ++i) dx[i] += inv * (dxhat[i] - m1 - xhat[i] * m2);
}

}  // namespace

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int64_t D = x.dim(x.rank() - 1);
    if (gamma.numel() != D || beta.numel() != D)
        throw ShapeError("layernorm: scale/shift must match last axis");
    const int64_t rows = x.numel() / D;

    auto st = std::make_shared<NormStats>();
    norm_forward(x.data(), rows, D, eps, *st);

    Tensor out = make_tensor(x.shape(), want_tape({&x, &gamma, &beta}));
    const float* g = gamma.data();
    const float* b = beta.data();
    float* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xh = st->xhat.data() + r * D;
        float* orow = po + r * D;
        for (int64_t i = 0; i < D; ++i) orow[i] = xh[i] * g[i] + b[i];
    }

    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), oi = out.impl_ptr();
        bool gx_on = x.requires_grad(), gg_on = gamma.requires_grad(), gb_on = beta.requires_grad();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* gam = gi->data.data();
            float* gx = gx_on ? ensure_grad(xi.get()).data() : nullptr;
            float* gg = gg_on ? ensure_grad(gi.get()).data() : nullptr;
            float* gb = gb_on ? ensure_grad(bi.get()).data() : nullptr;
            std::vector<float> dxhat(static_cast<size_t>(D));
            for (int64_t r = 0; r < rows; ++r) {
                const float* gr = go + r * D;
                const float* xh = st->xhat.data() + r * D;
                for (int64_t i = 0; i < D; ++i) {
                    dxhat[static_cast<size_t>(i)] = gr[i] * gam[i];
                    if (gg) gg[i] += gr[i] * xh[i];
                    if (gb) gb[i] += gr[i];
                }
                if (gx)
                    norm_backward_group(dxhat.data(), xh, st->inv_std[static_cast<size_t>(r)], D,
                                        gx + r * D);
            }
        });
    }
    return out;
}

Tensor groupnorm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
    if (x.rank() != 4) throw ShapeError("groupnorm expects [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups < 1 || C % groups != 0)
        throw ShapeError("groupnorm: channels not divisible by groups");
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("groupnorm: scale/shift must be [C]");
    const int64_t Cg = C / groups, n = Cg * H * W, rows = B * groups;

    auto st = std::make_shared<NormStats>();
    norm_forward(x.data(), rows, n, eps, *st);  // [B,C,H,W] rows are contiguous groups

    Tensor out = make_tensor(x.shape(), want_tape({&x, &gamma, &beta}));
    const float* g = gamma.data();
    const float* b = beta.data();
    float* po = out.data();
    const int64_t HW = H * W;
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t g0 = (r % groups) * Cg;
        const float* xh = st->xhat.data() + r * n;
        float* orow = po + r * n;
        for (int64_t c = 0; c < Cg; ++c) {
            const float gc = g[g0 + c], bc = b[g0 + c];
            for (int64_t i = 0; i < HW; ++i) orow[c * HW + i] = xh[c * HW + i] * gc + bc;
        }
    }

    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), oi = out.impl_ptr();
        bool gx_on = x.requires_grad(), gg_on = gamma.requires_grad(), gb_on = beta.requires_grad();
        int G = groups;
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* gam = gi->data.data();
            float* gx = gx_on ? ensure_grad(xi.get()).data() : nullptr;
            float* gg = gg_on ? ensure_grad(gi.get()).data() : nullptr;
            float* gb = gb_on ? ensure_grad(bi.get()).data() : nullptr;
            std::vector<float> dxhat(static_cast<size_t>(n));
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t g0 = (r % G) * Cg;
                const float* gr = go + r * n;
                const float* xh = st->xhat.data() + r * n;
                for (int64_t c = 0; c < Cg; ++c) {
                    const float gc = gam[g0 + c];
                    double sg = 0.0, sb = 0.0;
                    for (int64_t i = 0; i < HW; ++i) {
                        dxhat[static_cast<size_t>(c * HW + i)] = gr[c * HW + i] * gc;
                        sg += static_cast<double>(gr[c * HW + i]) * xh[c * HW + i];
                        sb += gr[c * HW + i];
                    }
                    if (gg) gg[g0 + c] += static_cast<float>(sg);
                    if (gb) gb[g0 + c] += static_cast<float>(sb);
                }
                if (gx)
                    norm_backward_group(dxhat.data(), xh, st->inv_std[static_cast<size_t>(r)], n,
                                        gx + r * n);
            }
        });
    }
    return out;
}

// ---- lookup ----

Tensor embedding(const Tensor& table, const IndexArray& idx) {
    if (table.rank() != 2) throw ShapeError("embedding table must be [K,D]");
    const int64_t K = table.dim(0), D = table.dim(1);
    for (int64_t v : idx.idx)
        if (v < 0 || v >= K) throw UsageError("embedding index out of range");
    Shape out_shape = idx.shape;
    out_shape.push_back(D);
    Tensor out = make_tensor(out_shape, want_tape({&table}));
    const float* pt = table.data();
    float* po = out.data();
    for (int64_t i = 0; i < idx.numel(); ++i)
        std::memcpy(po + i * D, pt + idx.idx[static_cast<size_t>(i)] * D,
                    static_cast<size_t>(D) * sizeof(float));
    if (out.requires_grad()) {
        auto ti = table.impl_ptr(), oi = out.impl_ptr();
        auto rows = std::make_shared<std::vector<int64_t>>(idx.idx);
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gt = ensure_grad(ti.get()).data();
            for (size_t i = 0; i < rows->size(); ++i) {
                float* dst = gt + (*rows)[i] * D;
                const float* src = go + static_cast<int64_t>(i) * D;
                for (int64_t d = 0; d < D; ++d) dst[d] += src[d];
            }
        });
    }
    return out;
}

// ---- gradient routing ----

Tensor stop_gradient(const Tensor& x) {
    Tensor out = make_tensor(x.shape(), false);
    std::memcpy(out.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(float));
    return out;
}

Tensor straight_through(const Tensor& x, const Tensor& x_q) {
    if (x.shape() != x_q.shape())
        throw ShapeError("straight_through: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(x_q.shape()));
    // forward value is x_q exactly; backward is identity into x, nothing to x_q
    Tensor out = make_tensor(x.shape(), want_tape({&x}));
    std::memcpy(out.data(), x_q.data(), static_cast<size_t>(x_q.numel()) * sizeof(float));
    if (out.requires_grad()) {
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        active_tape().record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            float* gx = ensure_grad(xi.get()).data();
            for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += go[i];
        });
    }
    return out;
}

// ---- attention ----

AttentionResult multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                                    const Tensor& w_out, const Tensor& b_out, const Tensor& kv_mask,
                                    bool want_weights) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
        throw ShapeError("attention expects [B,T,d] inputs");
    const int64_t B = q.dim(0), Tq = q.dim(1), d = q.dim(2);
    const int64_t Tkv = k.dim(1);
    if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != d || v.dim(2) != d || v.dim(1) != Tkv)
        throw ShapeError("attention: k/v shapes inconsistent");
    if (heads <= 0 || d % heads != 0) throw ConfigError("attention: d must be divisible by heads");
    const int64_t dh = d / heads;

    auto split = [&](const Tensor& t, int64_t T) {
        return transpose(reshape(t, {B, T, heads, dh}), {0, 2, 1, 3});  // [B,h,T,dh]
    };
    Tensor qh = split(q, Tq), kh = split(k, Tkv), vh = split(v, Tkv);
    Tensor scores = scale(matmul(qh, transpose(kh, {0, 1, 3, 2})),
                          1.0f / std::sqrt(static_cast<float>(dh)));
    if (kv_mask.defined()) {
        if (kv_mask.rank() != 2 || kv_mask.dim(0) != B || kv_mask.dim(1) != Tkv)
            throw ShapeError("attention: kv_mask must be [B,Tkv]");
        Tensor bias = scale(add_scalar(stop_gradient(kv_mask), -1.0f), 1e9f);  // 0 keep, -1e9 drop
        scores = add(scores, reshape(bias, {B, 1, 1, Tkv}));
    }
    Tensor w = softmax(scores, -1);  // [B,h,Tq,Tkv]
    Tensor ctx = matmul(w, vh);      // [B,h,Tq,dh]
    Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {B, Tq, d});
    Tensor out = matmul(merged, w_out);
    if (b_out.defined()) out = add(out, b_out);
    return {out, want_weights ? w : Tensor()};
}

// ---- conveniences ----

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

Tensor l2_normalize_rows(const Tensor& x, float eps) {
    Tensor n2 = sum(square(x), -1, /*keepdim=*/true);
    return div(x, sqrt(add_scalar(n2, eps)));
}

}  // namespace glyphdiff
