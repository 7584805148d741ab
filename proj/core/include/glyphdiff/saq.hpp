#pragma once

#include "glyphdiff/nn.hpp"

namespace glyphdiff {

// Learned discrete vocabulary of style concepts.
struct StyleCodebook {
    Tensor entries;               // [K,D]
    std::vector<int64_t> usage;   // per-entry hit counters, monotone until reset

    StyleCodebook() = default;
    StyleCodebook(ParamRegistry& reg, const std::string& name, int64_t k, int64_t d);

    int64_t size() const { return entries.dim(0); }
    int64_t dim() const { return entries.dim(1); }
    void reset_usage() { usage.assign(usage.size(), 0); }
};

struct QuantizeResult {
    Tensor f_q;       // [B,h,w,d] straight-through wrapped (gradients reach F)
    Tensor selected;  // [B,h,w,d] raw codebook rows (gradients reach E)
    IndexArray indices;  // [B,h,w]
};

// Nearest codebook row per position (exhaustive L2 scan, ties to the lowest
// index). Bumps usage counters.
QuantizeResult quantize(const Tensor& f, StyleCodebook& codebook);

// L_vq + beta * L_cmt: squared L2 per position (summed over the feature
// dim), averaged over batch x positions. Codebook rows learn from L_vq only,
// features from L_cmt only.
Tensor saq_loss(const Tensor& f, const Tensor& selected, float beta = 0.25f);

struct PooledStyle {
    Tensor global;  // [B,d]
    Tensor seq;     // [B,T,d]
};

struct CodebookStats {
    double perplexity = 0.0;
    double usage_fraction = 0.0;
};
CodebookStats codebook_stats(const std::vector<int64_t>& counts);

struct StyleFeatures {
    Tensor f;         // [B,h,w,d] continuous backbone features
    Tensor f_q;       // [B,h,w,d] quantized (straight-through)
    Tensor selected;  // [B,h,w,d] raw codebook rows
    IndexArray indices;
    Tensor global;  // [B,d]
    Tensor seq;     // [B,T,d], T = h*w
};

// CNN backbone -> codebook quantization -> fused attention pooling.
// With quantization disabled the continuous features are pooled through the
// same attention pool (the ablation baseline), and `selected`/`indices`
// stay empty.
class StyleExtractor {
public:
    static constexpr int64_t kFeatDim = 64;  // d == codebook D
    static constexpr int64_t kFeatH = 4;
    static constexpr int64_t kFeatW = 12;
    static constexpr int kPoolHeads = 4;

    StyleExtractor(ParamRegistry& reg, const std::string& prefix, int64_t codebook_size,
                   bool use_quantization);

    Tensor backbone(const Tensor& images) const;  // [B,3,32,96] -> [B,4,12,64]
    PooledStyle attention_pool(const Tensor& f, const Tensor& f_q) const;
    StyleFeatures forward(const Tensor& images);

    StyleCodebook& codebook() { return codebook_; }
    const StyleCodebook& codebook() const { return codebook_; }
    bool quantization_enabled() const { return use_quantization_; }

private:
    Conv2d c1_, c2_, c3_, c4_;
    GroupNormLayer gn2_, gn3_;
    StyleCodebook codebook_;
    Tensor summary_token_;  // [1,1,2d]
    MultiheadAttentionLayer pool_attn_;
    Linear pool_proj_;  // 2d -> d
    bool use_quantization_;
};

}  // namespace glyphdiff
