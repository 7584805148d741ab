#pragma once

#include <string>
#include <vector>

#include "glyphdiff/nn.hpp"

namespace glyphdiff {

// Character-level content encoder: embedding table + learned positions,
// through 3 transformer encoder layers. Any string over a-z encodes without
// a lexicon, which is what makes OOV generation possible.
class ContentEncoder {
public:
    static constexpr int64_t kDim = 128;
    static constexpr int kHeads = 4;
    static constexpr int64_t kFfDim = 256;

    ContentEncoder(ParamRegistry& reg, const std::string& prefix);

    struct Encoded {
        Tensor emb;   // [B,L,128], padded positions zeroed
        Tensor mask;  // [B,L], 1 valid / 0 pad
    };
    Encoded forward(const std::vector<std::string>& words) const;

private:
    EmbeddingTable chars_;
    Tensor pos_;  // [kMaxTextLen, kDim]
    TransformerEncoderLayer l1_, l2_, l3_;
};

}  // namespace glyphdiff
