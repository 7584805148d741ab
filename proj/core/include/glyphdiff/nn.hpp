#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glyphdiff/ops.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// Ordered named parameter table. Every trainable tensor is created through a
// registry; the name doubles as the checkpoint key, and initialization draws
// from a per-name RNG stream so weights depend only on (seed, name).
class ParamRegistry {
public:
    explicit ParamRegistry(uint64_t seed) : seed_(seed) {}

    // Kaiming-style uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
    Tensor add(const std::string& name, Shape shape, int64_t fan_in);
    Tensor add_const(const std::string& name, Shape shape, float value);
    Tensor add_normal(const std::string& name, Shape shape, float stddev);

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    Tensor find(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

private:
    Tensor insert(const std::string& name, Tensor t);
    uint64_t seed_;
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out], undefined when bias disabled
    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& name, int64_t in, int64_t out, bool bias = true);
    Tensor forward(const Tensor& x) const;
};

struct Conv2d {
    Tensor w;  // [O,C,kh,kw]
    Tensor b;  // [O]
    int stride = 1, padding = 0;
    Conv2d() = default;
    Conv2d(ParamRegistry& reg, const std::string& name, int64_t in_ch, int64_t out_ch, int kernel,
           int stride, int padding);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, padding); }
};

struct LayerNormLayer {
    Tensor gamma, beta;
    LayerNormLayer() = default;
    LayerNormLayer(ParamRegistry& reg, const std::string& name, int64_t dim);
    Tensor forward(const Tensor& x) const { return layernorm(x, gamma, beta); }
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int groups = 1;
    GroupNormLayer() = default;
    GroupNormLayer(ParamRegistry& reg, const std::string& name, int64_t channels, int groups);
    Tensor forward(const Tensor& x) const { return groupnorm(x, groups, gamma, beta); }
};

struct EmbeddingTable {
    Tensor table;  // [K,D]
    EmbeddingTable() = default;
    EmbeddingTable(ParamRegistry& reg, const std::string& name, int64_t count, int64_t dim,
                   float stddev = 0.02f);
    Tensor forward(const IndexArray& idx) const { return embedding(table, idx); }
};

// q/k/v/out projections around the scaled-dot-product core. Works as
// self-attention (x_kv == x_q) or cross-attention; kv_dim lets the context
// stream have a different width than the query stream.
struct MultiheadAttentionLayer {
    Linear wq, wk, wv;
    Tensor w_out, b_out;
    int heads = 1;
    MultiheadAttentionLayer() = default;
    MultiheadAttentionLayer(ParamRegistry& reg, const std::string& name, int64_t dim, int heads,
                            int64_t kv_dim = 0);
    AttentionResult forward(const Tensor& x_q, const Tensor& x_kv, const Tensor& kv_mask = Tensor(),
                            bool want_weights = false) const;
};

// Pre-LN transformer encoder block: attention + 2-layer MLP, both residual.
struct TransformerEncoderLayer {
    MultiheadAttentionLayer attn;
    LayerNormLayer ln1, ln2;
    Linear ff1, ff2;
    TransformerEncoderLayer() = default;
    TransformerEncoderLayer(ParamRegistry& reg, const std::string& name, int64_t dim, int heads,
                            int64_t ff_dim);
    Tensor forward(const Tensor& x, const Tensor& mask = Tensor()) const;
};

}  // namespace glyphdiff
