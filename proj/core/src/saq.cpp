#include "glyphdiff/saq.hpp"

#include <cmath>

#include "glyphdiff/synthglyph.hpp"

namespace glyphdiff {

StyleCodebook::StyleCodebook(ParamRegistry& reg, const std::string& name, int64_t k, int64_t d) {
    if (k < 2) throw ConfigError("codebook needs K >= 2");
    entries = reg.add_normal(name, {k, d}, 0.05f);
    usage.assign(static_cast<size_t>(k), 0);
}

QuantizeResult quantize(const Tensor& f, StyleCodebook& codebook) {
    if (f.rank() != 4) throw ShapeError("quantize expects [B,h,w,d]");
    const int64_t d = f.dim(3);
    if (d != codebook.dim())
        throw ConfigError("quantize: feature dim " + std::to_string(d) + " != codebook dim " +
                          std::to_string(codebook.dim()));
    const int64_t n = f.numel() / d;
    const int64_t k = codebook.size();
    const float* pf = f.data();
    const float* pe = codebook.entries.data();

    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const float* fi = pf + i * d;
        float best = 0.0f;
        int64_t best_k = 0;
        for (int64_t c = 0; c < k; ++c) {
            const float* ec = pe + c * d;
            float dist = 0.0f;
            for (int64_t j = 0; j < d; ++j) {
                const float t = fi[j] - ec[j];
                dist += t * t;
            }
            if (c == 0 || dist < best) {
                best = dist;
                best_k = c;
            }
        }
        idx[static_cast<size_t>(i)] = best_k;
        ++codebook.usage[static_cast<size_t>(best_k)];
    }

    QuantizeResult out;
    out.indices = IndexArray::from({f.dim(0), f.dim(1), f.dim(2)}, std::move(idx));
    IndexArray flat = IndexArray::from({n}, out.indices.idx);
    out.selected = reshape(embedding(codebook.entries, flat), f.shape());
    out.f_q = straight_through(f, out.selected);
    return out;
}

Tensor saq_loss(const Tensor& f, const Tensor& selected, float beta) {
    if (f.shape() != selected.shape()) throw ShapeError("saq_loss: shape mismatch");
    const float d = static_cast<float>(f.dim(f.rank() - 1));
    // mse averages over dims too; scale by d to get per-position squared L2
    Tensor l_vq = scale(mse(selected, stop_gradient(f)), d);
    Tensor l_cmt = scale(mse(f, stop_gradient(selected)), d);
    return add(l_vq, scale(l_cmt, beta));
}

CodebookStats codebook_stats(const std::vector<int64_t>& counts) {
    CodebookStats st;
    if (counts.empty()) return st;
    double total = 0.0;
    int64_t used = 0;
    for (int64_t c : counts) {
        total += static_cast<double>(c);
        if (c > 0) ++used;
    }
    if (total <= 0.0) return st;
    double entropy = 0.0;
    for (int64_t c : counts) {
        if (c <= 0) continue;
        const double p = static_cast<double>(c) / total;
        entropy -= p * std::log(p);
    }
    st.perplexity = std::exp(entropy);
    st.usage_fraction = static_cast<double>(used) / static_cast<double>(counts.size());
    return st;
}

StyleExtractor::StyleExtractor(ParamRegistry& reg, const std::string& prefix, int64_t codebook_size,
                               bool use_quantization)
    : use_quantization_(use_quantization) {
    c1_ = Conv2d(reg, prefix + "backbone.c1", 3, 16, 3, 2, 1);
    c2_ = Conv2d(reg, prefix + "backbone.c2", 16, 32, 3, 2, 1);
    gn2_ = GroupNormLayer(reg, prefix + "backbone.gn2", 32, 8);
    c3_ = Conv2d(reg, prefix + "backbone.c3", 32, 64, 3, 2, 1);
    gn3_ = GroupNormLayer(reg, prefix + "backbone.gn3", 64, 8);
    c4_ = Conv2d(reg, prefix + "backbone.c4", 64, kFeatDim, 3, 1, 1);
    codebook_ = StyleCodebook(reg, prefix + "codebook", codebook_size, kFeatDim);
    summary_token_ = reg.add_normal(prefix + "pool.summary", {1, 1, 2 * kFeatDim}, 0.02f);
    pool_attn_ = MultiheadAttentionLayer(reg, prefix + "pool.attn", 2 * kFeatDim, kPoolHeads);
    pool_proj_ = Linear(reg, prefix + "pool.proj", 2 * kFeatDim, kFeatDim);
}

Tensor StyleExtractor::backbone(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kGlyphH ||
        images.dim(3) != kGlyphW)
        throw ShapeError("style backbone expects [B,3,32,96], got " + shape_str(images.shape()));
    Tensor h = silu(c1_.forward(images));
    h = silu(gn2_.forward(c2_.forward(h)));
    h = silu(gn3_.forward(c3_.forward(h)));
    h = c4_.forward(h);                      // [B,d,4,12]
    return transpose(h, {0, 2, 3, 1});       // [B,4,12,d]
}

PooledStyle StyleExtractor::attention_pool(const Tensor& f, const Tensor& f_q) const {
    const int64_t B = f.dim(0), T = f.dim(1) * f.dim(2);
    Tensor fused = concat({f, f_q}, 3);                      // [B,h,w,2d]
    Tensor tokens = reshape(fused, {B, T, 2 * kFeatDim});    // [B,T,2d]
    Tensor summary = add(Tensor::zeros({B, 1, 2 * kFeatDim}), summary_token_);
    Tensor all = concat({summary, tokens}, 1);               // [B,T+1,2d]
    Tensor pooled = pool_proj_.forward(pool_attn_.forward(all, all).out);  // [B,T+1,d]
    PooledStyle out;
    out.global = reshape(slice(pooled, 1, 0, 1), {B, kFeatDim});
    out.seq = slice(pooled, 1, 1, T);
    return out;
}

StyleFeatures StyleExtractor::forward(const Tensor& images) {
    StyleFeatures sf;
    sf.f = backbone(images);
    if (use_quantization_) {
        QuantizeResult q = quantize(sf.f, codebook_);
        sf.f_q = q.f_q;
        sf.selected = q.selected;
        sf.indices = std::move(q.indices);
    } else {
        sf.f_q = sf.f;
    }
    PooledStyle pooled = attention_pool(sf.f, sf.f_q);
    sf.global = pooled.global;
    sf.seq = pooled.seq;
    return sf;
}

}  // namespace glyphdiff
