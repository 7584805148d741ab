#include "glyphdiff/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace glyphdiff {

Tensor ParamRegistry::insert(const std::string& name, Tensor t) {
    if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamRegistry::add(const std::string& name, Shape shape, int64_t fan_in) {
    RngStream rng(seed_, "init/" + name);
    const float bound = fan_in > 0 ? 1.0f / std::sqrt(static_cast<float>(fan_in)) : 0.0f;
    Tensor t = fan_in > 0 ? Tensor::rand_uniform(shape, -bound, bound, rng, true)
                          : Tensor::zeros(shape, true);
    return insert(name, t);
}

Tensor ParamRegistry::add_const(const std::string& name, Shape shape, float value) {
    return insert(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParamRegistry::add_normal(const std::string& name, Shape shape, float stddev) {
    RngStream rng(seed_, "init/" + name);
    Tensor t = Tensor::randn(std::move(shape), rng, true);
    for (auto& v : t.vec()) v *= stddev;
    return insert(name, t);
}

std::vector<Tensor> ParamRegistry::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
}

Tensor ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return items_[it->second].second;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int64_t in, int64_t out, bool bias) {
    w = reg.add(name + ".w", {in, out}, in);
    if (bias) b = reg.add(name + ".b", {out}, in);
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int64_t in_ch, int64_t out_ch,
               int kernel, int stride_, int padding_)
    : stride(stride_), padding(padding_) {
    const int64_t fan_in = in_ch * kernel * kernel;
    w = reg.add(name + ".w", {out_ch, in_ch, kernel, kernel}, fan_in);
    b = reg.add(name + ".b", {out_ch}, fan_in);
}

LayerNormLayer::LayerNormLayer(ParamRegistry& reg, const std::string& name, int64_t dim) {
    gamma = reg.add_const(name + ".g", {dim}, 1.0f);
    beta = reg.add_const(name + ".b", {dim}, 0.0f);
}

GroupNormLayer::GroupNormLayer(ParamRegistry& reg, const std::string& name, int64_t channels,
                               int groups_)
    : groups(groups_) {
    gamma = reg.add_const(name + ".g", {channels}, 1.0f);
    beta = reg.add_const(name + ".b", {channels}, 0.0f);
}

EmbeddingTable::EmbeddingTable(ParamRegistry& reg, const std::string& name, int64_t count,
                               int64_t dim, float stddev) {
    table = reg.add_normal(name + ".table", {count, dim}, stddev);
}

MultiheadAttentionLayer::MultiheadAttentionLayer(ParamRegistry& reg, const std::string& name,
                                                 int64_t dim, int heads_, int64_t kv_dim)
    : heads(heads_) {
    if (kv_dim <= 0) kv_dim = dim;
    wq = Linear(reg, name + ".q", dim, dim);
    wk = Linear(reg, name + ".k", kv_dim, dim);
    wv = Linear(reg, name + ".v", kv_dim, dim);
    w_out = reg.add(name + ".out.w", {dim, dim}, dim);
    b_out = reg.add(name + ".out.b", {dim}, dim);
}

AttentionResult MultiheadAttentionLayer::forward(const Tensor& x_q, const Tensor& x_kv,
                                                 const Tensor& kv_mask, bool want_weights) const {
    return multihead_attention(wq.forward(x_q), wk.forward(x_kv), wv.forward(x_kv), heads, w_out,
                               b_out, kv_mask, want_weights);
}

TransformerEncoderLayer::TransformerEncoderLayer(ParamRegistry& reg, const std::string& name,
                                                 int64_t dim, int heads, int64_t ff_dim) {
    attn = MultiheadAttentionLayer(reg, name + ".attn", dim, heads);
    ln1 = LayerNormLayer(reg, name + ".ln1", dim);
    ln2 = LayerNormLayer(reg, name + ".ln2", dim);
    ff1 = Linear(reg, name + ".ff1", dim, ff_dim);
    ff2 = Linear(reg, name + ".ff2", ff_dim, dim);
}

Tensor TransformerEncoderLayer::forward(const Tensor& x, const Tensor& mask) const {
    Tensor n = ln1.forward(x);
    Tensor h = add(x, attn.forward(n, n, mask).out);
    return add(h, ff2.forward(silu(ff1.forward(ln2.forward(h)))));
}

}  // namespace glyphdiff
