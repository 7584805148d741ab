#pragma once

#include "glyphdiff/nn.hpp"

namespace glyphdiff {

// Linear DDPM betas with the standard cumulative-product coefficients.
struct NoiseSchedule {
    int timesteps = 1000;
    std::vector<float> betas;
    std::vector<float> alphas_cumprod;
    std::vector<float> sqrt_acp;      // sqrt(alpha_bar)
    std::vector<float> sqrt_1m_acp;   // sqrt(1 - alpha_bar)

    static NoiseSchedule linear(int timesteps = 1000, float beta_start = 1e-4f,
                                float beta_end = 0.02f);
};

// Style and content streams projected to the denoiser context width, plus
// per-sample null flags. A flagged stream is swapped for the learned null
// embedding inside the denoiser.
struct ConditioningContext {
    Tensor style_seq;     // [B,Ts,d_ctx]
    Tensor content;       // [B,L,d_ctx]
    Tensor content_mask;  // [B,L]
    std::vector<bool> null_style, null_content;

    int64_t batch() const { return style_seq.dim(0); }
    static ConditioningContext null_context(const ConditioningContext& like);
};

// Joint conditioning drop with probability p (one coin per sample); the
// independent flag draws a coin per stream instead.
ConditioningContext drop_conditioning(const ConditioningContext& ctx, float p, RngStream& rng,
                                      bool independent = false);

Tensor q_sample(const NoiseSchedule& ns, const Tensor& z0, const IndexArray& t,
                const Tensor& noise);

// eps_uncond + s * (eps_cond - eps_uncond); s==0 and s==1 return the exact
// input values.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, float s);

struct DenoiserOutput {
    Tensor eps_hat;
    std::vector<Tensor> attention_maps;  // per cross-attn block, [B,heads,Tq,Tkv]
};

// Two-level conditional U-Net on [B,4,8,24] latents: ResNet blocks with
// sinusoidal timestep injection and cross-attention against the concatenated
// [style_seq; content] context at every level.
class Denoiser {
public:
    static constexpr int64_t kCtxDim = 128;
    static constexpr int64_t kWidth1 = 64;
    static constexpr int64_t kWidth2 = 128;
    static constexpr int kHeads = 4;
    static constexpr int64_t kTimeDim = 128;

    Denoiser(ParamRegistry& reg, const std::string& prefix);

    DenoiserOutput forward(const Tensor& z_t, const IndexArray& t, const ConditioningContext& ctx,
                           bool want_attention = false) const;

    int64_t style_tokens() const { return style_tokens_; }

private:
    struct ResBlock {
        GroupNormLayer gn1, gn2;
        Conv2d conv1, conv2, skip;
        Linear temb;
        bool has_skip = false;
        ResBlock() = default;
        ResBlock(ParamRegistry& reg, const std::string& name, int64_t in_ch, int64_t out_ch);
        Tensor forward(const Tensor& x, const Tensor& t_emb) const;
    };
    struct CrossBlock {
        LayerNormLayer ln1, ln2;
        MultiheadAttentionLayer attn;  // q: width, kv: kCtxDim
        Linear ff1, ff2;
        CrossBlock() = default;
        CrossBlock(ParamRegistry& reg, const std::string& name, int64_t width);
        Tensor forward(const Tensor& x, const Tensor& kv, const Tensor& kv_mask, Tensor* weights) const;
    };

    // assembles [B,Ts+L,d_ctx] context with null substitution
    void build_context(const ConditioningContext& ctx, Tensor& kv, Tensor& kv_mask) const;

    Linear time_fc1_, time_fc2_;
    Tensor null_style_, null_content_;  // [d_ctx]
    Conv2d conv_in_;
    ResBlock res1_, res2_, mid1_, mid2_, res3_;
    CrossBlock st1_, st2_, mid_st_, st3_;
    Conv2d down_;
    GroupNormLayer out_gn_;
    Conv2d conv_out_;
    mutable int64_t style_tokens_ = 0;
};

struct DenoisingLossResult {
    Tensor loss;      // scalar mse(eps, eps_hat)
    Tensor z_t;       // noisy latents
    IndexArray t;     // sampled timesteps
    Tensor noise;     // the true eps
    Tensor eps_hat;
    Tensor zhat0;     // one-step clean estimate, differentiable through eps_hat
};

DenoisingLossResult denoising_loss(const Denoiser& model, const NoiseSchedule& ns, const Tensor& z0,
                                   const ConditioningContext& ctx, RngStream& rng);

// Deterministic DDIM over a uniform-stride timestep subsequence ending at
// t=0; two denoiser calls per step combined by cfg_combine.
Tensor ddim_sample(const Denoiser& model, const NoiseSchedule& ns, const ConditioningContext& ctx,
                   int steps, float guidance, RngStream& rng, float eta = 0.0f);

}  // namespace glyphdiff
