// Acceptance suite: one pass/fail line per criterion. The slow criteria
// train real models at desk scale, so the full run takes a few hours on a
// 2-core box; --only <substring> narrows the set for development.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "glyphdiff/checkpoint.hpp"
#include "glyphdiff/eval.hpp"
#include "glyphdiff/image_io.hpp"
#include "glyphdiff/objectives.hpp"
#include "glyphdiff/optim.hpp"
#include "glyphdiff/trainer.hpp"

namespace fs = std::filesystem;
using namespace glyphdiff;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    std::string id;
    std::string name;
    std::function<std::string()> run;  // returns "" on pass, reason on fail
};

std::string g_work;

std::string work_dir(const std::string& name) {
    std::string p = g_work + "/" + name;
    fs::create_directories(p);
    return p;
}

Tensor random_tensor(Shape shape, uint64_t seed, bool rg = true, float lo = -1.0f, float hi = 1.0f) {
    RngStream rng(seed, "acceptance");
    return Tensor::rand_uniform(std::move(shape), lo, hi, rng, rg);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

double grad_norm(const Tensor& t) {
    if (!t.has_grad()) return 0.0;
    double acc = 0;
    for (float g : t.grad_view()) acc += static_cast<double>(g) * g;
    return std::sqrt(acc);
}

// central finite differences, rel 1e-3 with abs floor 1e-4
std::string fd_check(const std::function<Tensor()>& build, std::vector<Tensor> params,
                     const std::string& label) {
    active_tape().clear();
    for (Tensor& p : params) p.zero_grad();
    backward(build());
    std::vector<std::vector<float>> analytic;
    for (Tensor& p : params)
        analytic.push_back(p.has_grad() ? p.grad_view()
                                        : std::vector<float>(static_cast<size_t>(p.numel()), 0.0f));
    active_tape().clear();
    auto eval = [&]() {
        NoGradGuard ng;
        const float v = build().item();
        active_tape().clear();
        return v;
    };
    const float eps = 1e-3f;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const float saved = p.data()[i];
            p.data()[i] = saved + eps;
            const float fp = eval();
            p.data()[i] = saved - eps;
            const float fm = eval();
            p.data()[i] = saved;
            const double num = (static_cast<double>(fp) - fm) / (2.0 * eps);
            const double ana = analytic[pi][static_cast<size_t>(i)];
            const double tol = std::max(1e-4, 1e-3 * std::max(std::abs(num), std::abs(ana)));
            if (std::abs(num - ana) > tol)
                return label + ": param " + std::to_string(pi) + "[" + std::to_string(i) +
                       "] numeric " + std::to_string(num) + " vs tape " + std::to_string(ana);
        }
    }
    return "";
}

// ---- A1 ----
std::string a1_substitution() {
    // Tab. 1 metrics (FID 10.20 / HWD 0.74 / WER 0.22) require IAM and
    // externally pretrained networks; this artifact replaces them with the
    // property-based criteria below. Nothing to execute.
    return "";
}

// ---- A2 gradient suite ----
std::string a2_gradients() {
    const auto t0 = Clock::now();
    std::string err;
    auto check = [&](const std::function<Tensor()>& f, std::vector<Tensor> ps,
                     const std::string& label) {
        if (!err.empty()) return;
        err = fd_check(f, std::move(ps), label);
    };

    for (uint64_t s = 1; s <= 5 && err.empty(); ++s) {
        Tensor a = random_tensor({2, 3}, s), b = random_tensor({2, 3}, s + 50);
        for (auto& v : b.vec()) v += v >= 0 ? 1.5f : -1.5f;
        check([&] { return mean(square(add(a, b))); }, {a, b}, "add");
        check([&] { return mean(square(sub(a, b))); }, {a, b}, "sub");
        check([&] { return mean(square(mul(a, b))); }, {a, b}, "mul");
        check([&] { return mean(square(div(a, b))); }, {a, b}, "div");
        check([&] { return mean(square(relu(a))); }, {a}, "relu");
        check([&] { return mean(square(silu(a))); }, {a}, "silu");
        check([&] { return mean(exp(a)); }, {a}, "exp");
        check([&] { return mean(square(scale(a, 1.7f))); }, {a}, "scale");
        check([&] { return mean(square(add_scalar(a, 0.3f))); }, {a}, "add_scalar");
        Tensor p = random_tensor({5}, s + 100, true, 0.5f, 2.0f);
        check([&] { return mean(log(p)); }, {p}, "log");
        check([&] { return mean(sqrt(p)); }, {p}, "sqrt");

        Tensor ma = random_tensor({3, 4}, s + 150), mb = random_tensor({4, 2}, s + 200);
        check([&] { return mean(square(matmul(ma, mb))); }, {ma, mb}, "matmul");

        Tensor cx = random_tensor({1, 2, 4, 5}, s + 250, true, -0.6f, 0.6f);
        Tensor cw = random_tensor({2, 2, 3, 3}, s + 300, true, -0.6f, 0.6f);
        Tensor cb = random_tensor({2}, s + 350, true, -0.6f, 0.6f);
        check([&] { return mean(square(conv2d(cx, cw, cb, 1, 1))); }, {cx, cw, cb}, "conv2d");

        Tensor r = random_tensor({2, 3, 4}, s + 400);
        check([&] { return mean(square(sum(r, 1))); }, {r}, "sum-axis");
        check([&] { return square(sum(r)); }, {r}, "sum");
        check([&] { return square(mean(r)); }, {r}, "mean");
        check([&] { return mean(square(mean(r, 2))); }, {r}, "mean-axis");
        check([&] { return mean(square(max(r, 1))); }, {r}, "max");
        check([&] { return mean(square(softmax(r, -1))); }, {r}, "softmax");
        check([&] { return mean(square(reshape(r, {6, 4}))); }, {r}, "reshape");
        check([&] { return mean(square(transpose(r, {2, 0, 1}))); }, {r}, "transpose");
        check([&] { return mean(square(slice(r, 1, 1, 2))); }, {r}, "slice");
        Tensor r2 = random_tensor({2, 3, 4}, s + 450);
        check([&] { return mean(square(concat({r, r2}, 2))); }, {r, r2}, "concat");

        Tensor img = random_tensor({1, 2, 3, 4}, s + 500);
        check([&] { return mean(square(upsample_nearest2x(img))); }, {img}, "upsample");
        Tensor pool = random_tensor({1, 2, 4, 6}, s + 550);
        check([&] { return mean(square(avgpool2d(pool, 2, 2))); }, {pool}, "avgpool2d");

        Tensor lx = random_tensor({2, 6}, s + 600), lg = random_tensor({6}, s + 650),
               lb = random_tensor({6}, s + 700);
        check([&] { return mean(square(layernorm(lx, lg, lb))); }, {lx, lg, lb}, "layernorm");
        Tensor gx = random_tensor({1, 4, 2, 2}, s + 750), gg = random_tensor({4}, s + 800),
               gb = random_tensor({4}, s + 850);
        check([&] { return mean(square(groupnorm(gx, 2, gg, gb))); }, {gx, gg, gb}, "groupnorm");

        Tensor table = random_tensor({5, 3}, s + 900);
        IndexArray idx = IndexArray::from({4}, {1, 3, 0, 3});
        check([&] { return mean(square(embedding(table, idx))); }, {table}, "embedding");

        Tensor q = random_tensor({1, 2, 4}, s + 950), k = random_tensor({1, 3, 4}, s + 1000),
               v = random_tensor({1, 3, 4}, s + 1050), wo = random_tensor({4, 4}, s + 1100);
        check([&] { return mean(square(multihead_attention(q, k, v, 2, wo, Tensor()).out)); },
              {q, k, v, wo}, "attention");

        // straight-through: forward is x_q, backward is identity into x, so
        // the tape gradient must equal the analytic gradient of the
        // identity-substituted expression (FD on the value is blind to x)
        if (err.empty()) {
            Tensor st_x = random_tensor({4}, s + 1150), st_q = random_tensor({4}, s + 1200, false);
            active_tape().clear();
            backward(mean(square(straight_through(st_x, st_q))));
            for (int64_t i = 0; i < 4; ++i) {
                const double want = 2.0 * st_q.at(i) / 4.0;
                const double got = st_x.grad_view()[static_cast<size_t>(i)];
                if (std::abs(got - want) > 1e-6 * std::max(1.0, std::abs(want))) {
                    err = "straight_through identity gradient mismatch";
                    break;
                }
            }
            active_tape().clear();
        }
    }
    if (!err.empty()) return err;

    // Composite SAQ + SCE + PCE + denoising loss on a 2-pair batch. The
    // straight-through and stop-gradient routes make raw finite differences
    // of the training loss blind to part of the tape gradient by design, so
    // the oracle is the frozen-surrogate reference: the same pipeline with
    // every sg/ST branch pinned at its base value. Its finite differences
    // must match the real loss's tape gradients wherever the quantization
    // indices stay put.
    RunConfig cfg;
    cfg.batch = 4;
    cfg.codebook_size = 16;
    GeneratorModel model(cfg, 99);
    auto ae = LatentAutoencoder(99);
    RngStream imgs_rng(123, "composite");
    Tensor images = Tensor::rand_uniform({4, 3, kGlyphH, kGlyphW}, 0.0f, 1.0f, imgs_rng);
    std::vector<std::string> texts{"ab", "xyz"};
    const float tau = cfg.tau, alpha = cfg.alpha, beta = cfg.beta;

    Tensor z0;
    {
        NoGradGuard ng;
        z0 = ae.encode(slice(images, 0, 2, 2));
        active_tape().clear();
    }

    auto build_real = [&]() {
        StyleFeatures sf = model.style.forward(images);
        Tensor fgr = slice(sf.global, 0, 0, 2), fgt = slice(sf.global, 0, 2, 2);
        ConditioningContext ctx = model.make_context(slice(sf.seq, 0, 0, 2), texts);
        RngStream diff_rng(7, "composite/diffusion");
        DenoisingLossResult dl = denoising_loss(model.denoiser, model.schedule, z0, ctx, diff_rng);
        Tensor lp = latent_pce_loss(z0, dl.zhat0, model.pce_heads, tau, model.pce_scales).loss;
        Tensor ls = sce_loss(fgt, fgr, tau);
        Tensor lq = saq_loss(sf.f, sf.selected, beta);
        return combined_loss(dl.loss, lp, ls, lq, alpha);
    };

    // base snapshots for the frozen branches
    IndexArray idx0;
    Tensor f0, sel0, st_offset0, nt0, nr0;
    std::vector<Tensor> pt0, pp0;
    {
        NoGradGuard ng;
        StyleFeatures sf = model.style.forward(images);
        idx0 = sf.indices;
        f0 = sf.f.clone();
        sel0 = sf.selected.clone();
        st_offset0 = sub(sel0, f0).clone();
        nt0 = l2_normalize_rows(slice(sf.global, 0, 2, 2)).clone();
        nr0 = l2_normalize_rows(slice(sf.global, 0, 0, 2)).clone();
        ConditioningContext ctx = model.make_context(slice(sf.seq, 0, 0, 2), texts);
        RngStream diff_rng(7, "composite/diffusion");
        DenoisingLossResult dl = denoising_loss(model.denoiser, model.schedule, z0, ctx, diff_rng);
        for (size_t si = 0; si < model.pce_scales.size(); ++si) {
            pt0.push_back(
                extract_patches(z0, model.pce_scales[si], model.pce_heads[si]).embeddings.clone());
            pp0.push_back(extract_patches(dl.zhat0, model.pce_scales[si], model.pce_heads[si])
                              .embeddings.clone());
        }
        active_tape().clear();
    }

    // directed InfoNCE with frozen negative features
    auto nce_frozen = [&](const Tensor& anchors, const Tensor& positives, const Tensor& frozen_a,
                          const Tensor& frozen_b) {
        const int64_t p = anchors.dim(0);
        Tensor pos_logit = scale(sum(mul(anchors, positives), -1), 1.0f / tau);
        Tensor s1 = exp(scale(matmul(anchors, transpose(frozen_a, {1, 0})), 1.0f / tau));
        Tensor s2 = exp(scale(matmul(anchors, transpose(frozen_b, {1, 0})), 1.0f / tau));
        Tensor mask = Tensor::full({p, p}, 1.0f);
        for (int64_t i = 0; i < p; ++i) mask.data()[i * p + i] = 0.0f;
        Tensor neg = sum(mul(add(s1, s2), mask), -1);
        return mean(sub(log(add(exp(pos_logit), neg)), pos_logit));
    };
    auto pce_frozen = [&](const PatchSet& anchors, const PatchSet& positives,
                          const Tensor& frozen_negs) {
        const int64_t h = anchors.count;
        Tensor pos_logit = scale(sum(mul(anchors.embeddings, positives.embeddings), -1), 1.0f / tau);
        Tensor sims = exp(scale(matmul(anchors.embeddings, transpose(frozen_negs, {0, 2, 1})),
                                1.0f / tau));
        Tensor mask = Tensor::full({h, h}, 1.0f);
        for (int64_t i = 0; i < h; ++i) mask.data()[i * h + i] = 0.0f;
        Tensor neg = sum(mul(sims, reshape(mask, {1, h, h})), -1);
        return mean(sub(log(add(exp(pos_logit), neg)), pos_logit));
    };

    auto build_ref = [&]() {
        Tensor f = model.style.backbone(images);
        Tensor fq_ref = add(f, st_offset0);  // straight-through as identity + frozen offset
        PooledStyle pooled = model.style.attention_pool(f, fq_ref);
        Tensor fgr = slice(pooled.global, 0, 0, 2), fgt = slice(pooled.global, 0, 2, 2);

        ConditioningContext ctx = model.make_context(slice(pooled.seq, 0, 0, 2), texts);
        RngStream diff_rng(7, "composite/diffusion");
        DenoisingLossResult dl = denoising_loss(model.denoiser, model.schedule, z0, ctx, diff_rng);

        Tensor pce_acc;
        for (size_t si = 0; si < model.pce_scales.size(); ++si) {
            PatchSet pt = extract_patches(z0, model.pce_scales[si], model.pce_heads[si]);
            PatchSet pp = extract_patches(dl.zhat0, model.pce_scales[si], model.pce_heads[si]);
            Tensor both = add(pce_frozen(pt, pp, pp0[si]), pce_frozen(pp, pt, pt0[si]));
            pce_acc = pce_acc.defined() ? add(pce_acc, both) : both;
        }
        Tensor lp = scale(pce_acc, 1.0f / (2.0f * static_cast<float>(model.pce_scales.size())));

        Tensor nt = l2_normalize_rows(fgt), nr = l2_normalize_rows(fgr);
        Tensor ls = add(scale(nce_frozen(nt, nr, nt0, nr0), 0.5f),
                        scale(nce_frozen(nr, nt, nt0, nr0), 0.5f));

        const float d = static_cast<float>(f.dim(3));
        Tensor l_vq = scale(mse(reshape(embedding(model.style.codebook().entries,
                                                  IndexArray::from({idx0.numel()}, idx0.idx)),
                                        f.shape()),
                                f0),
                            d);
        Tensor l_cmt = scale(mse(f, sel0), d);
        Tensor lq = add(l_vq, scale(l_cmt, beta));
        return combined_loss(dl.loss, lp, ls, lq, alpha);
    };

    // probe a handful of elements from every trainable subsystem
    struct Pick {
        const char* name;
        int64_t element;
    };
    const std::vector<Pick> picks = {
        {"saq.backbone.c1.w", 0},  {"saq.backbone.c4.b", 2},  {"saq.codebook", 5},
        {"saq.pool.proj.w", 17},   {"content.chars.table", 30}, {"ctx.style.w", 11},
        {"unet.res1.conv1.w", 40}, {"unet.st2.xattn.q.w", 21}, {"unet.time.fc1.w", 3},
        {"unet.null.style", 7},    {"pce.s2.l1.w", 9},          {"pce.s8.l2.b", 1},
        {"unet.out.conv.w", 13},
    };
    active_tape().clear();
    backward(build_real());
    std::vector<double> tape_grads;
    for (const Pick& pk : picks) {
        Tensor t = model.params.find(pk.name);
        tape_grads.push_back(t.has_grad() ? t.grad_view()[static_cast<size_t>(pk.element)] : 0.0);
    }
    active_tape().clear();

    auto snapshot_indices = [&]() {
        NoGradGuard ng;
        StyleFeatures sf = model.style.forward(images);
        active_tape().clear();
        return sf.indices.idx;
    };
    const auto base_indices = snapshot_indices();
    // larger step than the per-op checks: the composite loss is O(1), so the
    // f32 evaluation noise at eps=1e-3 would swamp the 1e-4 floor
    const float eps = 4e-3f;
    int checked = 0;
    for (size_t pi = 0; pi < picks.size(); ++pi) {
        Tensor t = model.params.find(picks[pi].name);
        const int64_t i = picks[pi].element;
        const float saved = t.data()[i];
        auto eval_at = [&](float v) {
            t.data()[i] = v;
            NoGradGuard ng;
            const float out = build_ref().item();
            active_tape().clear();
            return out;
        };
        t.data()[i] = saved + eps;
        const bool stable_p = snapshot_indices() == base_indices;
        const float fp = eval_at(saved + eps);
        t.data()[i] = saved - eps;
        const bool stable_m = snapshot_indices() == base_indices;
        const float fm = eval_at(saved - eps);
        t.data()[i] = saved;
        if (!stable_p || !stable_m) continue;  // quantization index flipped: non-smooth point
        ++checked;
        const double num = (static_cast<double>(fp) - fm) / (2.0 * eps);
        const double ana = tape_grads[pi];
        const double tol = std::max(1e-4, 2e-3 * std::max(std::abs(num), std::abs(ana)));
        if (std::abs(num - ana) > tol)
            return std::string("composite: ") + picks[pi].name + "[" + std::to_string(i) +
                   "] numeric " + std::to_string(num) + " vs tape " + std::to_string(ana);
    }
    if (checked < 10) return "composite: too few index-stable probe elements";

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (secs >= 120.0) return "gradient suite exceeded 2 minutes: " + std::to_string(secs) + "s";
    return "";
}

// ---- A3 loss identities ----
std::string a3_loss_identities() {
    // uniform-logit SCE per-anchor term = ln(N-1), N=4
    Tensor row = random_tensor({6}, 31, false);
    auto fill = [&](Shape s) {
        Tensor t = Tensor::zeros(s);
        for (int64_t i = 0; i < t.numel() / 6; ++i) std::copy_n(row.data(), 6, t.data() + i * 6);
        return t;
    };
    const float sce_u = sce_half(fill({2, 6}), fill({2, 6}), fill({2, 2, 6}), 0.55f).item();
    if (std::abs(sce_u - 1.0986123f) > 1e-5f)
        return "uniform SCE " + std::to_string(sce_u) + " != ln(3)";

    // uniform-logit PCE per-patch term = ln(H_s), H_s = 12
    Tensor prow = l2_normalize_rows(random_tensor({1, 1, 16}, 32, false));
    Tensor pe = Tensor::zeros({1, 12, 16});
    for (int64_t i = 0; i < 12; ++i) std::copy_n(prow.data(), 16, pe.data() + i * 16);
    PatchSet z{2, 12, pe}, zh{2, 12, pe.clone()};
    const float pce_u = latent_pce_half(z, zh, 0.3f).item();
    if (std::abs(pce_u - 2.4849067f) > 1e-5f)
        return "uniform PCE " + std::to_string(pce_u) + " != ln(12)";

    // L_SAQ = 0 when features equal the selected rows
    Tensor f = random_tensor({1, 2, 3, 4}, 33);
    if (saq_loss(f, f.clone()).item() != 0.0f) return "L_SAQ(F,F) != 0";
    active_tape().clear();

    // bidirectional symmetry, bitwise
    Tensor ta = random_tensor({4, 16}, 34), tb = random_tensor({4, 16}, 35);
    const float ab = sce_loss(ta, tb, 0.1f).item();
    const float ba = sce_loss(tb, ta, 0.1f).item();
    active_tape().clear();
    if (std::memcmp(&ab, &ba, sizeof(float)) != 0) return "sce_loss not bitwise symmetric";

    // stop-gradient negatives receive exactly zero gradient
    Tensor anchor = random_tensor({3, 8}, 36), pos = random_tensor({3, 8}, 37),
           negs = random_tensor({3, 4, 8}, 38);
    backward(sce_half(anchor, pos, stop_gradient(negs), 0.1f));
    const double gn = grad_norm(negs);
    active_tape().clear();
    if (gn != 0.0) return "sce negatives leaked gradient: " + std::to_string(gn);

    // white-box PCE check: the tape gradient of the generated embeddings
    // equals finite differences of a frozen-negative variant, so negatives
    // contribute nothing
    {
        const int64_t H = 3, d = 8;
        Tensor ez = l2_normalize_rows(random_tensor({1, H, d}, 39, false));
        Tensor eh_raw = random_tensor({1, H, d}, 40);
        active_tape().clear();
        eh_raw.zero_grad();
        PatchSet a{2, H, ez}, b{2, H, l2_normalize_rows(eh_raw)};
        backward(latent_pce_half(a, b, 1.0f));
        std::vector<float> tape_grad = eh_raw.grad_view();
        active_tape().clear();

        Tensor snapshot = l2_normalize_rows(eh_raw).clone();
        auto frozen = [&]() {
            Tensor nb = l2_normalize_rows(eh_raw);
            Tensor pos_l = sum(mul(ez, nb), -1);
            Tensor sims = matmul(ez, transpose(snapshot, {0, 2, 1}));
            Tensor m = Tensor::full({H, H}, 1.0f);
            for (int64_t i = 0; i < H; ++i) m.data()[i * H + i] = 0.0f;
            Tensor negsum = sum(mul(exp(sims), reshape(m, {1, H, H})), -1);
            return mean(sub(log(add(exp(pos_l), negsum)), pos_l));
        };
        const float eps = 1e-3f;
        for (int64_t i = 0; i < eh_raw.numel(); ++i) {
            const float saved = eh_raw.data()[i];
            NoGradGuard ng;
            eh_raw.data()[i] = saved + eps;
            const float fp = frozen().item();
            eh_raw.data()[i] = saved - eps;
            const float fm = frozen().item();
            eh_raw.data()[i] = saved;
            active_tape().clear();
            const double num = (static_cast<double>(fp) - fm) / (2.0 * eps);
            if (std::abs(num - tape_grad[static_cast<size_t>(i)]) >
                std::max(1e-4, 1e-3 * std::abs(num)))
                return "pce negative gradient leak at element " + std::to_string(i);
        }
    }
    return "";
}

// ---- A4 VQ contract ----
std::string a4_vq_contract() {
    // exhaustive-scan oracle over 1000 random instances
    int instances = 0;
    for (uint64_t s = 0; instances < 1000; ++s) {
        ParamRegistry reg(s);
        StyleCodebook cb(reg, "cb", 12, 6);
        cb.entries.vec() = random_tensor({12, 6}, s + 10000, false).vec();
        Tensor f = random_tensor({1, 2, 5, 6}, s + 20000, false);  // 10 positions
        QuantizeResult q = quantize(f, cb);
        const int64_t n = f.numel() / 6;
        for (int64_t i = 0; i < n; ++i, ++instances) {
            float best = 0;
            int64_t bk = 0;
            for (int64_t c = 0; c < 12; ++c) {
                float dist = 0;
                for (int64_t j = 0; j < 6; ++j) {
                    const float t = f.at(i * 6 + j) - cb.entries.at(c * 6 + j);
                    dist += t * t;
                }
                if (c == 0 || dist < best) {
                    best = dist;
                    bk = c;
                }
            }
            if (q.indices.idx[static_cast<size_t>(i)] != bk)
                return "index mismatch at instance " + std::to_string(instances);
            for (int64_t j = 0; j < 6; ++j)
                if (q.f_q.at(i * 6 + j) != cb.entries.at(bk * 6 + j))
                    return "value mismatch at instance " + std::to_string(instances);
        }
    }

    // straight-through identity gradient
    Tensor x = random_tensor({10}, 77);
    Tensor xq = random_tensor({10}, 78, false);
    backward(sum(straight_through(x, xq)));
    for (float g : x.grad_view())
        if (g != 1.0f) return "straight-through gradient is not identity";
    active_tape().clear();

    // argmin invariance under common additive shift
    ParamRegistry reg(5);
    StyleCodebook cb(reg, "cb", 16, 4);
    cb.entries.vec() = random_tensor({16, 4}, 6, false).vec();
    Tensor f = random_tensor({1, 3, 3, 4}, 7, false);
    auto base = quantize(f, cb).indices.idx;
    Tensor shift = random_tensor({4}, 8, false);
    ParamRegistry reg2(9);
    StyleCodebook cb2(reg2, "cb", 16, 4);
    for (int64_t r = 0; r < 16; ++r)
        for (int64_t j = 0; j < 4; ++j)
            cb2.entries.data()[r * 4 + j] = cb.entries.at(r * 4 + j) + shift.at(j);
    Tensor f2 = f.clone();
    for (int64_t i = 0; i < f.numel() / 4; ++i)
        for (int64_t j = 0; j < 4; ++j) f2.data()[i * 4 + j] += shift.at(j);
    if (quantize(f2, cb2).indices.idx != base) return "argmin changed under common shift";
    return "";
}

// ---- A5 diffusion contracts ----
std::string a5_diffusion() {
    NoiseSchedule ns = NoiseSchedule::linear();
    for (int t = 0; t < ns.timesteps; ++t) {
        if (t > 0 && (ns.betas[static_cast<size_t>(t)] <= ns.betas[static_cast<size_t>(t - 1)] ||
                      ns.alphas_cumprod[static_cast<size_t>(t)] >=
                          ns.alphas_cumprod[static_cast<size_t>(t - 1)]))
            return "schedule not monotone at t=" + std::to_string(t);
        const double sa = ns.sqrt_acp[static_cast<size_t>(t)],
                     sb = ns.sqrt_1m_acp[static_cast<size_t>(t)];
        if (std::abs(sa * sa + sb * sb - 1.0) > 1e-6)
            return "sqrt identity violated at t=" + std::to_string(t);
    }

    // q_sample / x0 inversion round-trip with the true noise
    RngStream rng(11, "a5");
    Tensor z0 = Tensor::randn({2, 4, 8, 24}, rng);
    Tensor eps = Tensor::randn(z0.shape(), rng);
    for (int t : {0, 250, 700, 999}) {
        IndexArray ta = IndexArray::from({2}, {t, t});
        Tensor zt = q_sample(ns, z0, ta, eps);
        Tensor zhat0 = scale(sub(zt, scale(eps, ns.sqrt_1m_acp[static_cast<size_t>(t)])),
                             1.0f / ns.sqrt_acp[static_cast<size_t>(t)]);
        for (int64_t i = 0; i < z0.numel(); ++i)
            if (std::abs(zhat0.at(i) - z0.at(i)) > 1e-4f * std::max(1.0f, std::abs(z0.at(i))))
                return "x0 round-trip off at t=" + std::to_string(t);
    }

    // DDIM determinism under a fixed seed
    ParamRegistry reg(12);
    Denoiser model(reg, "unet.");
    NoiseSchedule short_ns = NoiseSchedule::linear(100);
    ConditioningContext ctx;
    ctx.style_seq = random_tensor({1, 6, Denoiser::kCtxDim}, 13, false);
    ctx.content = random_tensor({1, 3, Denoiser::kCtxDim}, 14, false);
    ctx.content_mask = Tensor::full({1, 3}, 1.0f);
    ctx.null_style.assign(1, false);
    ctx.null_content.assign(1, false);
    RngStream r1(5, "ddim"), r2(5, "ddim");
    Tensor za = ddim_sample(model, short_ns, ctx, 10, 4.0f, r1);
    Tensor zb = ddim_sample(model, short_ns, ctx, 10, 4.0f, r2);
    active_tape().clear();
    if (!bitwise_equal(za, zb)) return "ddim sampling not bitwise deterministic";

    // cfg identities
    Tensor c = random_tensor({1, 4, 2, 2}, 15, false), u = random_tensor({1, 4, 2, 2}, 16, false);
    if (!bitwise_equal(cfg_combine(c, u, 1.0f), c)) return "cfg s=1 identity broken";
    if (!bitwise_equal(cfg_combine(c, u, 0.0f), u)) return "cfg s=0 identity broken";
    if (!bitwise_equal(cfg_combine(u, u, 7.5f), u)) return "cfg cond==uncond identity broken";
    return "";
}

// ---- A6 end-to-end smoke ----
std::string a6_smoke() {
    const std::string data = work_dir("a6_data");
    const std::string out = work_dir("a6_out");
    build_dataset(make_writers(4, 1), 64, 1, data);

    RunConfig cfg;
    cfg.data_dir = data;
    cfg.out_dir = out;
    cfg.seed = 1;
    cfg.ae_steps = 2000;
    cfg.train_steps = 2000;
    cfg.batch = 16;
    cfg.checkpoint_every = 0;

    AeTrainResult ae = train_autoencoder(cfg);
    std::printf("     a6: ae heldout mse %.5f (<= 0.01 required)\n",
                static_cast<double>(ae.heldout_mse));
    if (ae.heldout_mse > 0.01f)
        return "ae heldout mse " + std::to_string(ae.heldout_mse) + " > 0.01";

    TrainResult tr = train_generator(cfg);
    double head = 0, tail = 0;
    for (int i = 0; i < 100; ++i) head += tr.log[static_cast<size_t>(i)].den;
    for (int i = 1900; i < 2000; ++i) tail += tr.log[static_cast<size_t>(i)].den;
    head /= 100.0;
    tail /= 100.0;
    std::printf("     a6: denoising loss head %.4f tail %.4f (ratio %.3f <= 0.5 required)\n", head,
                tail, tail / head);
    if (tail > 0.5 * head)
        return "denoising loss ratio " + std::to_string(tail / head) + " > 0.5";
    return "";
}

// ---- A7 style capture ----
std::string a7_style_capture() {
    const std::string data = work_dir("a7_data");
    const std::string out = work_dir("a7_out");
    // all 8 writers seen: held-out samples are unseen-content renders
    build_dataset(make_writers(8, 7), 64, 7, data, /*seen_fraction=*/1.0f, /*iv_fraction=*/0.75f);

    RunConfig cfg;
    cfg.data_dir = data;
    cfg.out_dir = out;
    cfg.seed = 7;
    cfg.ae_steps = 2000;
    cfg.train_steps = 10000;
    cfg.batch = 16;
    cfg.checkpoint_every = 2500;

    train_autoencoder(cfg);
    train_generator(cfg);

    auto ae = load_autoencoder(out + "/ae.ckpt");
    auto model = load_generator(out + "/generator.ckpt");
    DatasetManifest m = load_manifest(data);
    std::set<std::string> iv(m.iv_words.begin(), m.iv_words.end());

    // style features for all entries
    std::vector<std::vector<float>> train_f, held_f;
    std::vector<int> train_l, held_l;
    std::vector<size_t> held_idx;
    std::vector<Tensor> images(m.entries.size());
    {
        NoGradGuard ng;
        for (size_t i = 0; i < m.entries.size(); ++i) {
            images[i] = read_ppm(data + "/" + m.entries[i].path);
            StyleFeatures sf = model->style.forward(reshape(images[i], {1, 3, kGlyphH, kGlyphW}));
            std::vector<float> f(sf.global.data(), sf.global.data() + StyleExtractor::kFeatDim);
            active_tape().clear();
            if (iv.count(m.entries[i].text)) {
                train_f.push_back(std::move(f));
                train_l.push_back(m.entries[i].writer_id);
            } else {
                held_f.push_back(std::move(f));
                held_l.push_back(m.entries[i].writer_id);
                held_idx.push_back(i);
            }
        }
    }
    const double knn = knn_accuracy(train_f, train_l, held_f, held_l);
    std::printf("     a7: writer 1-nn retrieval %.3f (>= 0.80 required, chance 0.125)\n", knn);

    // slant-sign probe on generated images conditioned on unseen-content refs
    const char* probe_words[5] = {"oxen", "moon", "sums", "vown", "zone"};
    int correct = 0;
    const int total = 40;
    for (int k = 0; k < total; ++k) {
        const size_t ref_i = held_idx[static_cast<size_t>(k) % held_idx.size()];
        const int wid = m.entries[ref_i].writer_id;
        Tensor gen = sample_image(*model, *ae, images[ref_i], probe_words[k % 5],
                                  1000 + static_cast<uint64_t>(k), 50, 7.5f);
        const float est = estimate_slant(gen);
        const float true_slant = m.styles[static_cast<size_t>(wid)].slant;
        correct += (est > 0) == (true_slant > 0) ? 1 : 0;
    }
    const double probe = static_cast<double>(correct) / total;
    std::printf("     a7: slant-sign probe on generated %.3f (>= 0.75 required, chance 0.5)\n",
                probe);

    if (knn < 0.80) return "writer 1-nn " + std::to_string(knn) + " < 0.80";
    if (probe < 0.75) return "slant probe " + std::to_string(probe) + " < 0.75";
    return "";
}

// ---- A8 ablation directions ----
std::string a8_ablations() {
    const std::string data = work_dir("a8_data");
    if (!fs::exists(data + "/manifest.tsv"))
        build_dataset(make_writers(8, 7), 64, 7, data, 1.0f, 0.75f);
    const std::string ae_out = work_dir("a8_ae");

    RunConfig base_cfg;
    base_cfg.data_dir = data;
    base_cfg.out_dir = ae_out;
    base_cfg.seed = 7;
    base_cfg.ae_steps = 2000;
    base_cfg.batch = 16;
    base_cfg.checkpoint_every = 0;
    if (!fs::exists(ae_out + "/ae.ckpt")) train_autoencoder(base_cfg);
    auto ae = load_autoencoder(ae_out + "/ae.ckpt");

    DatasetManifest m = load_manifest(data);
    std::set<std::string> iv(m.iv_words.begin(), m.iv_words.end());
    std::vector<size_t> held_idx;
    for (size_t i = 0; i < m.entries.size(); ++i)
        if (!iv.count(m.entries[i].text)) held_idx.push_back(i);
    std::map<int, std::vector<size_t>> by_writer;
    for (size_t i = 0; i < m.entries.size(); ++i)
        by_writer[m.entries[i].writer_id].push_back(i);

    auto frechet_for = [&](const std::string& run_dir, uint64_t seed) {
        auto model = load_generator(run_dir + "/generator.ckpt");
        std::vector<Tensor> real, gen;
        RngStream pick(seed, "a8/pick");
        const int count = 48;
        for (int k = 0; k < count; ++k) {
            const size_t i = held_idx[static_cast<size_t>(k) % held_idx.size()];
            const auto& pool = by_writer[m.entries[i].writer_id];
            size_t ref_i = pool[pick.next_below(pool.size())];
            if (pool.size() > 1)
                while (ref_i == i) ref_i = pool[pick.next_below(pool.size())];
            Tensor ref = read_ppm(data + "/" + m.entries[ref_i].path);
            real.push_back(read_ppm(data + "/" + m.entries[i].path));
            gen.push_back(sample_image(*model, *ae, ref, m.entries[i].text,
                                       seed * 131 + static_cast<uint64_t>(k), 30, 7.5f));
        }
        return frechet_distance(latent_features(*ae, real), latent_features(*ae, gen));
    };

    int pce_wins = 0, saq_wins = 0;
    for (uint64_t seed : {21, 22, 23}) {
        auto run = [&](const char* tag, bool saq, bool sce, bool pce) {
            RunConfig cfg = base_cfg;
            cfg.seed = seed;
            cfg.train_steps = 800;
            cfg.use_saq = saq;
            cfg.use_sce = sce;
            cfg.use_pce = pce;
            cfg.out_dir = work_dir("a8_" + std::string(tag) + "_" + std::to_string(seed));
            fs::copy_file(ae_out + "/ae.ckpt", cfg.out_dir + "/ae.ckpt",
                          fs::copy_options::overwrite_existing);
            train_generator(cfg);
            return cfg.out_dir;
        };
        const std::string base_dir = run("base", false, false, false);
        const std::string pce_dir = run("pce", false, false, true);
        const std::string saq_dir = run("saq", true, false, false);
        const double fd_base = frechet_for(base_dir, seed);
        const double fd_pce = frechet_for(pce_dir, seed);
        const double fd_saq = frechet_for(saq_dir, seed);
        std::printf("     a8 seed %llu: frechet base %.4f | +pce %.4f | +saq %.4f\n",
                    static_cast<unsigned long long>(seed), fd_base, fd_pce, fd_saq);
        std::fflush(stdout);
        pce_wins += fd_pce <= fd_base ? 1 : 0;
        saq_wins += fd_saq <= fd_base ? 1 : 0;
    }
    std::printf("     a8: +pce wins %d/3, +saq wins %d/3 (majority required)\n", pce_wins,
                saq_wins);
    if (pce_wins < 2) return "pce direction holds only " + std::to_string(pce_wins) + "/3";
    if (saq_wins < 2) return "saq direction holds only " + std::to_string(saq_wins) + "/3";
    return "";
}

// ---- A9 serialization ----
std::string a9_serialization() {
    const std::string dir = work_dir("a9");
    Checkpoint c;
    c.set("w", random_tensor({6, 5}, 91, false));
    c.set("b", random_tensor({5}, 92, false));
    const std::string p1 = dir + "/a.ckpt", p2 = dir + "/b.ckpt";
    save_checkpoint(p1, c);
    save_checkpoint(p2, load_checkpoint(p1));
    auto read_bytes = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    if (read_bytes(p1) != read_bytes(p2)) return "save->load->save not byte identical";

    std::string bytes = read_bytes(p1);
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x10);
    std::ofstream(p1, std::ios::binary | std::ios::trunc)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
        load_checkpoint(p1);
        return "single-byte corruption not detected";
    } catch (const FormatError&) {
    }

    // manifest round-trip
    const std::string ds = work_dir("a9_data");
    DatasetManifest m = build_dataset(make_writers(2, 3), 4, 3, ds);
    DatasetManifest r = load_manifest(ds);
    if (r.entries.size() != m.entries.size()) return "manifest entry count changed";
    for (size_t i = 0; i < m.entries.size(); ++i)
        if (r.entries[i].path != m.entries[i].path || r.entries[i].text != m.entries[i].text ||
            r.entries[i].writer_id != m.entries[i].writer_id)
            return "manifest row " + std::to_string(i) + " changed";
    if (r.iv_words != m.iv_words || r.oov_words != m.oov_words ||
        r.seen_writers != m.seen_writers || r.unseen_writers != m.unseen_writers)
        return "manifest splits changed";
    for (size_t i = 0; i < m.styles.size(); ++i)
        if (r.styles[i].slant != m.styles[i].slant ||
            r.styles[i].stroke_width != m.styles[i].stroke_width ||
            r.styles[i].bg_noise != m.styles[i].bg_noise)
            return "style table row " + std::to_string(i) + " changed";
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    std::string only;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--only" && i + 1 < argc) only = argv[++i];
        if (std::string(argv[i]) == "--work" && i + 1 < argc) g_work = argv[++i];
    }
    if (g_work.empty()) g_work = (fs::temp_directory_path() / "glyphdiff_acceptance").string();
    fs::create_directories(g_work);

    const std::vector<Criterion> criteria = {
        {"A1", "paper-table metrics out of scope (property-based substitutes below)", a1_substitution},
        {"A2", "gradient suite: finite differences over every differentiable op + composite loss", a2_gradients},
        {"A3", "loss identities: ln(N-1), ln(H_s), zero SAQ, SCE symmetry, sg negatives", a3_loss_identities},
        {"A4", "vq contract: exhaustive-scan oracle, straight-through, shift invariance", a4_vq_contract},
        {"A5", "diffusion contracts: schedule, x0 round-trip, ddim determinism, cfg", a5_diffusion},
        {"A6", "end-to-end smoke: ae mse <= 0.01, denoising loss halves", a6_smoke},
        {"A7", "style capture: writer 1-nn >= 0.80, slant probe >= 0.75", a7_style_capture},
        {"A8", "ablation directions: base+pce <= base, base+saq <= base (3 seeds)", a8_ablations},
        {"A9", "serialization: byte-identical round-trip, crc, manifest", a9_serialization},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && c.id.find(only) == std::string::npos) continue;
        const auto t0 = Clock::now();
        std::string err;
        try {
            err = c.run();
        } catch (const std::exception& e) {
            err = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        if (err.empty()) {
            std::printf("[PASS] %s %s (%.1fs)\n", c.id.c_str(), c.name.c_str(), secs);
        } else {
            std::printf("[FAIL] %s %s (%.1fs): %s\n", c.id.c_str(), c.name.c_str(), secs,
                        err.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures;
}
