#include "glyphdiff/content_encoder.hpp"

#include <algorithm>

#include "glyphdiff/synthglyph.hpp"

namespace glyphdiff {

ContentEncoder::ContentEncoder(ParamRegistry& reg, const std::string& prefix) {
    chars_ = EmbeddingTable(reg, prefix + "chars", 26, kDim);
    pos_ = reg.add_normal(prefix + "pos.table", {kMaxTextLen, kDim}, 0.02f);
    l1_ = TransformerEncoderLayer(reg, prefix + "l1", kDim, kHeads, kFfDim);
    l2_ = TransformerEncoderLayer(reg, prefix + "l2", kDim, kHeads, kFfDim);
    l3_ = TransformerEncoderLayer(reg, prefix + "l3", kDim, kHeads, kFfDim);
}

ContentEncoder::Encoded ContentEncoder::forward(const std::vector<std::string>& words) const {
    if (words.empty()) throw ContentError("encode_text: empty batch");
    int64_t L = 0;
    for (const auto& w : words) {
        if (w.empty()) throw ContentError("encode_text: empty word");
        if (static_cast<int64_t>(w.size()) > kMaxTextLen)
            throw ContentError("encode_text: word \"" + w + "\" exceeds max length " +
                               std::to_string(kMaxTextLen));
        for (char c : w)
            if (c < 'a' || c > 'z')
                throw ContentError(std::string("encode_text: character '") + c +
                                   "' outside alphabet a-z");
        L = std::max(L, static_cast<int64_t>(w.size()));
    }
    const int64_t B = static_cast<int64_t>(words.size());

    std::vector<int64_t> ids(static_cast<size_t>(B * L), 0);
    Tensor mask = Tensor::zeros({B, L});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < static_cast<int64_t>(words[static_cast<size_t>(b)].size()); ++i) {
            ids[static_cast<size_t>(b * L + i)] = words[static_cast<size_t>(b)][static_cast<size_t>(i)] - 'a';
            mask.data()[b * L + i] = 1.0f;
        }

    Tensor emb = chars_.forward(IndexArray::from({B, L}, std::move(ids)));  // [B,L,128]
    emb = add(emb, slice(pos_, 0, 0, L));
    emb = l1_.forward(emb, mask);
    emb = l2_.forward(emb, mask);
    emb = l3_.forward(emb, mask);
    // padded positions carry no signal downstream
    emb = mul(emb, reshape(mask, {B, L, 1}));
    return {emb, mask};
}

}  // namespace glyphdiff
