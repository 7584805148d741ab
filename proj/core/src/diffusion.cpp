#include "glyphdiff/diffusion.hpp"

#include <cmath>

namespace glyphdiff {

NoiseSchedule NoiseSchedule::linear(int timesteps, float beta_start, float beta_end) {
    NoiseSchedule ns;
    ns.timesteps = timesteps;
    ns.betas.resize(static_cast<size_t>(timesteps));
    ns.alphas_cumprod.resize(static_cast<size_t>(timesteps));
    ns.sqrt_acp.resize(static_cast<size_t>(timesteps));
    ns.sqrt_1m_acp.resize(static_cast<size_t>(timesteps));
    double acp = 1.0;
    for (int i = 0; i < timesteps; ++i) {
        const double frac = timesteps > 1 ? static_cast<double>(i) / (timesteps - 1) : 0.0;
        const double beta = beta_start + (beta_end - beta_start) * frac;
        ns.betas[static_cast<size_t>(i)] = static_cast<float>(beta);
        acp *= 1.0 - beta;
        ns.alphas_cumprod[static_cast<size_t>(i)] = static_cast<float>(acp);
        ns.sqrt_acp[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(acp));
        ns.sqrt_1m_acp[static_cast<size_t>(i)] = static_cast<float>(std::sqrt(1.0 - acp));
    }
    return ns;
}

ConditioningContext ConditioningContext::null_context(const ConditioningContext& like) {
    ConditioningContext out = like;
    out.null_style.assign(static_cast<size_t>(like.batch()), true);
    out.null_content.assign(static_cast<size_t>(like.batch()), true);
    return out;
}

ConditioningContext drop_conditioning(const ConditioningContext& ctx, float p, RngStream& rng,
                                      bool independent) {
    if (p < 0.0f || p > 1.0f) throw ConfigError("drop_conditioning: p must be in [0,1]");
    ConditioningContext out = ctx;
    const size_t b = static_cast<size_t>(ctx.batch());
    out.null_style.assign(b, false);
    out.null_content.assign(b, false);
    for (size_t i = 0; i < b; ++i) {
        if (independent) {
            out.null_style[i] = rng.uniform() < p;
            out.null_content[i] = rng.uniform() < p;
        } else {
            const bool drop = rng.uniform() < p;
            out.null_style[i] = drop;
            out.null_content[i] = drop;
        }
    }
    return out;
}

namespace {

// per-sample schedule coefficient as a [B,1,1,1] constant
Tensor coeff_tensor(const std::vector<float>& table, const IndexArray& t) {
    Tensor c = Tensor::zeros({t.numel(), 1, 1, 1});
    for (int64_t i = 0; i < t.numel(); ++i)
        c.data()[i] = table[static_cast<size_t>(t.idx[static_cast<size_t>(i)])];
    return c;
}

void check_t(const NoiseSchedule& ns, const IndexArray& t) {
    for (int64_t v : t.idx)
        if (v < 0 || v >= ns.timesteps)
            throw UsageError("timestep " + std::to_string(v) + " outside [0," +
                             std::to_string(ns.timesteps) + ")");
}

Tensor sinusoidal_embedding(const IndexArray& t, int64_t dim) {
    const int64_t half = dim / 2;
    Tensor out = Tensor::zeros({t.numel(), dim});
    float* p = out.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
        const float tv = static_cast<float>(t.idx[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < half; ++j) {
            const float freq =
                std::exp(-std::log(10000.0f) * static_cast<float>(j) / static_cast<float>(half));
            p[i * dim + j] = std::sin(tv * freq);
            p[i * dim + half + j] = std::cos(tv * freq);
        }
    }
    return out;
}

}  // namespace

Tensor q_sample(const NoiseSchedule& ns, const Tensor& z0, const IndexArray& t,
                const Tensor& noise) {
    if (z0.shape() != noise.shape()) throw ShapeError("q_sample: z0/noise shape mismatch");
    if (t.numel() != z0.dim(0)) throw ShapeError("q_sample: one timestep per sample required");
    check_t(ns, t);
    return add(mul(z0, coeff_tensor(ns.sqrt_acp, t)), mul(noise, coeff_tensor(ns.sqrt_1m_acp, t)));
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, float s) {
    if (eps_cond.shape() != eps_uncond.shape()) throw ShapeError("cfg_combine: shape mismatch");
    if (s == 0.0f) return eps_uncond.clone();
    if (s == 1.0f) return eps_cond.clone();
    return add(eps_uncond, scale(sub(eps_cond, eps_uncond), s));
}

// ---- Denoiser ----

Denoiser::ResBlock::ResBlock(ParamRegistry& reg, const std::string& name, int64_t in_ch,
                             int64_t out_ch) {
    gn1 = GroupNormLayer(reg, name + ".gn1", in_ch, 8);
    conv1 = Conv2d(reg, name + ".conv1", in_ch, out_ch, 3, 1, 1);
    temb = Linear(reg, name + ".temb", kTimeDim, out_ch);
    gn2 = GroupNormLayer(reg, name + ".gn2", out_ch, 8);
    conv2 = Conv2d(reg, name + ".conv2", out_ch, out_ch, 3, 1, 1);
    has_skip = in_ch != out_ch;
    if (has_skip) skip = Conv2d(reg, name + ".skip", in_ch, out_ch, 1, 1, 0);
}

Tensor Denoiser::ResBlock::forward(const Tensor& x, const Tensor& t_emb) const {
    Tensor h = conv1.forward(silu(gn1.forward(x)));
    Tensor te = temb.forward(t_emb);  // [B,out]
    h = add(h, reshape(te, {te.dim(0), te.dim(1), 1, 1}));
    h = conv2.forward(silu(gn2.forward(h)));
    return add(h, has_skip ? skip.forward(x) : x);
}

Denoiser::CrossBlock::CrossBlock(ParamRegistry& reg, const std::string& name, int64_t width) {
    ln1 = LayerNormLayer(reg, name + ".ln1", width);
    attn = MultiheadAttentionLayer(reg, name + ".xattn", width, kHeads, kCtxDim);
    ln2 = LayerNormLayer(reg, name + ".ln2", width);
    ff1 = Linear(reg, name + ".ff1", width, 2 * width);
    ff2 = Linear(reg, name + ".ff2", 2 * width, width);
}

Tensor Denoiser::CrossBlock::forward(const Tensor& x, const Tensor& kv, const Tensor& kv_mask,
                                     Tensor* weights) const {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor tokens = reshape(transpose(x, {0, 2, 3, 1}), {B, H * W, C});
    AttentionResult ar = attn.forward(ln1.forward(tokens), kv, kv_mask, weights != nullptr);
    if (weights) *weights = ar.weights;
    Tensor h = add(tokens, ar.out);
    h = add(h, ff2.forward(silu(ff1.forward(ln2.forward(h)))));
    return transpose(reshape(h, {B, H, W, C}), {0, 3, 1, 2});
}

Denoiser::Denoiser(ParamRegistry& reg, const std::string& prefix) {
    time_fc1_ = Linear(reg, prefix + "time.fc1", kTimeDim, kTimeDim);
    time_fc2_ = Linear(reg, prefix + "time.fc2", kTimeDim, kTimeDim);
    null_style_ = reg.add_normal(prefix + "null.style", {kCtxDim}, 0.02f);
    null_content_ = reg.add_normal(prefix + "null.content", {kCtxDim}, 0.02f);
    conv_in_ = Conv2d(reg, prefix + "conv_in", 4, kWidth1, 3, 1, 1);
    res1_ = ResBlock(reg, prefix + "res1", kWidth1, kWidth1);
    st1_ = CrossBlock(reg, prefix + "st1", kWidth1);
    down_ = Conv2d(reg, prefix + "down", kWidth1, kWidth1, 3, 2, 1);
    res2_ = ResBlock(reg, prefix + "res2", kWidth1, kWidth2);
    st2_ = CrossBlock(reg, prefix + "st2", kWidth2);
    mid1_ = ResBlock(reg, prefix + "mid1", kWidth2, kWidth2);
    mid_st_ = CrossBlock(reg, prefix + "mid_st", kWidth2);
    mid2_ = ResBlock(reg, prefix + "mid2", kWidth2, kWidth2);
    res3_ = ResBlock(reg, prefix + "res3", kWidth2 + kWidth1, kWidth1);
    st3_ = CrossBlock(reg, prefix + "st3", kWidth1);
    out_gn_ = GroupNormLayer(reg, prefix + "out.gn", kWidth1, 8);
    conv_out_ = Conv2d(reg, prefix + "out.conv", kWidth1, 4, 3, 1, 1);
}

void Denoiser::build_context(const ConditioningContext& ctx, Tensor& kv, Tensor& kv_mask) const {
    const int64_t B = ctx.batch();
    const int64_t Ts = ctx.style_seq.dim(1), L = ctx.content.dim(1);
    style_tokens_ = Ts;
    if (ctx.style_seq.dim(2) != kCtxDim || ctx.content.dim(2) != kCtxDim)
        throw ShapeError("conditioning streams must be projected to d_ctx");

    Tensor null_style_rows = add(Tensor::zeros({1, Ts, kCtxDim}), reshape(null_style_, {1, 1, kCtxDim}));
    Tensor null_content_rows =
        add(Tensor::zeros({1, L, kCtxDim}), reshape(null_content_, {1, 1, kCtxDim}));
    const Tensor ones_mask = Tensor::full({1, L}, 1.0f);

    std::vector<Tensor> rows, masks;
    for (int64_t b = 0; b < B; ++b) {
        const bool ns = !ctx.null_style.empty() && ctx.null_style[static_cast<size_t>(b)];
        const bool nc = !ctx.null_content.empty() && ctx.null_content[static_cast<size_t>(b)];
        Tensor s = ns ? null_style_rows : slice(ctx.style_seq, 0, b, 1);
        Tensor c = nc ? null_content_rows : slice(ctx.content, 0, b, 1);
        rows.push_back(concat({s, c}, 1));
        Tensor cm = nc ? ones_mask
                       : (ctx.content_mask.defined() ? slice(ctx.content_mask, 0, b, 1) : ones_mask);
        masks.push_back(concat({Tensor::full({1, Ts}, 1.0f), cm}, 1));
    }
    kv = concat(rows, 0);        // [B,Ts+L,d_ctx]
    kv_mask = concat(masks, 0);  // [B,Ts+L]
}

DenoiserOutput Denoiser::forward(const Tensor& z_t, const IndexArray& t,
                                 const ConditioningContext& ctx, bool want_attention) const {
    if (z_t.rank() != 4 || z_t.dim(1) != 4) throw ShapeError("denoise expects [B,4,h,w] latents");
    if (t.numel() != z_t.dim(0)) throw ShapeError("denoise: one timestep per sample");

    Tensor kv, kv_mask;
    build_context(ctx, kv, kv_mask);

    Tensor temb = time_fc2_.forward(silu(time_fc1_.forward(sinusoidal_embedding(t, kTimeDim))));

    DenoiserOutput out;
    std::vector<Tensor*> maps(4, nullptr);
    if (want_attention) {
        out.attention_maps.resize(4);
        for (int i = 0; i < 4; ++i) maps[static_cast<size_t>(i)] = &out.attention_maps[static_cast<size_t>(i)];
    }

    Tensor h = conv_in_.forward(z_t);           // [B,64,8,24]
    h = res1_.forward(h, temb);
    h = st1_.forward(h, kv, kv_mask, maps[0]);
    Tensor skip1 = h;
    h = down_.forward(h);                       // [B,64,4,12]
    h = res2_.forward(h, temb);                 // [B,128,4,12]
    h = st2_.forward(h, kv, kv_mask, maps[1]);
    h = mid1_.forward(h, temb);
    h = mid_st_.forward(h, kv, kv_mask, maps[2]);
    h = mid2_.forward(h, temb);
    h = upsample_nearest2x(h);                  // [B,128,8,24]
    h = concat({h, skip1}, 1);                  // [B,192,8,24]
    h = res3_.forward(h, temb);                 // [B,64,8,24]
    h = st3_.forward(h, kv, kv_mask, maps[3]);
    out.eps_hat = conv_out_.forward(silu(out_gn_.forward(h)));
    return out;
}

DenoisingLossResult denoising_loss(const Denoiser& model, const NoiseSchedule& ns, const Tensor& z0,
                                   const ConditioningContext& ctx, RngStream& rng) {
    const int64_t B = z0.dim(0);
    DenoisingLossResult r;
    std::vector<int64_t> ts(static_cast<size_t>(B));
    for (auto& v : ts) v = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(ns.timesteps)));
    r.t = IndexArray::from({B}, std::move(ts));
    r.noise = Tensor::randn(z0.shape(), rng);
    r.z_t = q_sample(ns, z0, r.t, r.noise);
    r.eps_hat = model.forward(r.z_t, r.t, ctx).eps_hat;
    r.loss = mse(r.noise, r.eps_hat);

    // one-step clean estimate: (z_t - sqrt(1-acp)*eps_hat) / sqrt(acp)
    Tensor c1 = coeff_tensor(ns.sqrt_acp, r.t);
    Tensor c2 = coeff_tensor(ns.sqrt_1m_acp, r.t);
    r.zhat0 = div(sub(r.z_t, mul(r.eps_hat, c2)), c1);
    return r;
}

Tensor ddim_sample(const Denoiser& model, const NoiseSchedule& ns, const ConditioningContext& ctx,
                   int steps, float guidance, RngStream& rng, float eta) {
    if (steps < 1 || steps > ns.timesteps)
        throw ConfigError("ddim_sample: steps must be in [1," + std::to_string(ns.timesteps) + "]");
    NoGradGuard ng;
    const int64_t B = ctx.batch();
    Tensor z = Tensor::randn({B, 4, 8, 24}, rng);

    ConditioningContext uncond = ConditioningContext::null_context(ctx);

    // uniform-stride subsequence ending at t=0: {0, T/steps, 2T/steps, ...}
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) ts[static_cast<size_t>(i)] = i * ns.timesteps / steps;

    for (int i = steps - 1; i >= 0; --i) {
        const int t = ts[static_cast<size_t>(i)];
        IndexArray tarr = IndexArray::from({B}, std::vector<int64_t>(static_cast<size_t>(B), t));
        Tensor eps_c = model.forward(z, tarr, ctx).eps_hat;
        Tensor eps_u = model.forward(z, tarr, uncond).eps_hat;
        Tensor eps = cfg_combine(eps_c, eps_u, guidance);

        const float sa = ns.sqrt_acp[static_cast<size_t>(t)];
        const float sb = ns.sqrt_1m_acp[static_cast<size_t>(t)];
        Tensor zhat0 = scale(sub(z, scale(eps, sb)), 1.0f / sa);
        if (i == 0) {
            z = zhat0;
            break;
        }
        const int tp = ts[static_cast<size_t>(i - 1)];
        const float acp_t = ns.alphas_cumprod[static_cast<size_t>(t)];
        const float acp_p = ns.alphas_cumprod[static_cast<size_t>(tp)];
        float sigma = 0.0f;
        if (eta > 0.0f)
            sigma = eta * std::sqrt((1.0f - acp_p) / (1.0f - acp_t) * (1.0f - acp_t / acp_p));
        const float dir = std::sqrt(std::max(0.0f, 1.0f - acp_p - sigma * sigma));
        z = add(scale(zhat0, ns.sqrt_acp[static_cast<size_t>(tp)]), scale(eps, dir));
        if (sigma > 0.0f) z = add(z, scale(Tensor::randn(z.shape(), rng), sigma));
    }
    return z;
}

}  // namespace glyphdiff
