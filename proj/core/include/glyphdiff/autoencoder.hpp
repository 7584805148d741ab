#pragma once

#include "glyphdiff/nn.hpp"

namespace glyphdiff {

// Small convolutional autoencoder; its latent space is where diffusion and
// the patch-contrastive objective operate. Trained once on the dataset, then
// frozen for generator training.
class LatentAutoencoder {
public:
    static constexpr int64_t kLatentC = 4;
    static constexpr int64_t kLatentH = 8;   // 32/4
    static constexpr int64_t kLatentW = 24;  // 96/4

    explicit LatentAutoencoder(uint64_t seed);

    Tensor encode(const Tensor& images) const;    // [B,3,32,96] -> [B,4,8,24]
    Tensor decode_raw(const Tensor& z) const;     // unclamped, for training
    Tensor decode(const Tensor& z) const;         // clamped to [0,1]

    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    void freeze();

    // 1/std of training-set latents; diffusion runs on z / latent_std
    float latent_std = 1.0f;

private:
    ParamRegistry params_;
    Conv2d enc1_, enc2_, enc3_;
    Conv2d dec1_, dec2_, dec3_;
};

}  // namespace glyphdiff
