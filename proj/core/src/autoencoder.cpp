#include "glyphdiff/autoencoder.hpp"

#include <algorithm>

#include "glyphdiff/synthglyph.hpp"

namespace glyphdiff {

LatentAutoencoder::LatentAutoencoder(uint64_t seed) : params_(seed) {
    enc1_ = Conv2d(params_, "ae.enc1", 3, 32, 3, 2, 1);
    enc2_ = Conv2d(params_, "ae.enc2", 32, 64, 3, 2, 1);
    enc3_ = Conv2d(params_, "ae.enc3", 64, kLatentC, 3, 1, 1);
    dec1_ = Conv2d(params_, "ae.dec1", kLatentC, 64, 3, 1, 1);
    dec2_ = Conv2d(params_, "ae.dec2", 64, 32, 3, 1, 1);
    dec3_ = Conv2d(params_, "ae.dec3", 32, 3, 3, 1, 1);
}

Tensor LatentAutoencoder::encode(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != kGlyphH ||
        images.dim(3) != kGlyphW)
        throw ShapeError("ae_encode expects [B,3,32,96], got " + shape_str(images.shape()));
    Tensor h = silu(enc1_.forward(images));
    h = silu(enc2_.forward(h));
    return enc3_.forward(h);
}

Tensor LatentAutoencoder::decode_raw(const Tensor& z) const {
    if (z.rank() != 4 || z.dim(1) != kLatentC || z.dim(2) != kLatentH || z.dim(3) != kLatentW)
        throw ShapeError("ae_decode expects [B,4,8,24], got " + shape_str(z.shape()));
    Tensor h = silu(dec1_.forward(z));
    h = upsample_nearest2x(h);
    h = silu(dec2_.forward(h));
    h = upsample_nearest2x(h);
    return dec3_.forward(h);
}

Tensor LatentAutoencoder::decode(const Tensor& z) const {
    NoGradGuard ng;
    Tensor out = decode_raw(z).clone();
    for (auto& v : out.vec()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

void LatentAutoencoder::freeze() {
    for (auto [name, t] : params_.items()) t.set_requires_grad(false);
}

}  // namespace glyphdiff
