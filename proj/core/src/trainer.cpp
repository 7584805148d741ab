#include "glyphdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "glyphdiff/image_io.hpp"
#include "glyphdiff/optim.hpp"

namespace fs = std::filesystem;

namespace glyphdiff {

GeneratorModel::GeneratorModel(const RunConfig& cfg_, uint64_t seed)
    : cfg(cfg_), params(seed),
      style(params, "saq.", cfg_.codebook_size, cfg_.use_saq),
      content(params, "content."),
      denoiser(params, "unet."),
      schedule(NoiseSchedule::linear(cfg_.timesteps)) {
    style_proj = Linear(params, "ctx.style", StyleExtractor::kFeatDim, Denoiser::kCtxDim);
    content_proj = Linear(params, "ctx.content", ContentEncoder::kDim, Denoiser::kCtxDim);
    for (int s : pce_scales)
        pce_heads.emplace_back(params, "pce.s" + std::to_string(s),
                               s * s * LatentAutoencoder::kLatentC);
}

ConditioningContext GeneratorModel::make_context(const Tensor& f_seq,
                                                 const std::vector<std::string>& texts) const {
    ConditioningContext ctx;
    ctx.style_seq = style_proj.forward(f_seq);
    ContentEncoder::Encoded enc = content.forward(texts);
    ctx.content = content_proj.forward(enc.emb);
    ctx.content_mask = enc.mask;
    ctx.null_style.assign(static_cast<size_t>(f_seq.dim(0)), false);
    ctx.null_content.assign(static_cast<size_t>(f_seq.dim(0)), false);
    return ctx;
}

Checkpoint GeneratorModel::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& [name, t] : params.items()) ckpt.set(name, t);
    ckpt.set("meta.codebook_size", Tensor::scalar(static_cast<float>(cfg.codebook_size)));
    ckpt.set("meta.use_saq", Tensor::scalar(cfg.use_saq ? 1.0f : 0.0f));
    ckpt.set("meta.timesteps", Tensor::scalar(static_cast<float>(cfg.timesteps)));
    return ckpt;
}

void GeneratorModel::load(const Checkpoint& ckpt) { ckpt.load_into(params.items()); }

LoadedDataset load_dataset(const std::string& dir) {
    LoadedDataset ds;
    ds.manifest = load_manifest(dir);
    std::set<int> seen(ds.manifest.seen_writers.begin(), ds.manifest.seen_writers.end());
    std::set<std::string> iv(ds.manifest.iv_words.begin(), ds.manifest.iv_words.end());

    ds.train_view = ds.manifest;
    ds.train_view.entries.clear();
    for (size_t i = 0; i < ds.manifest.entries.size(); ++i) {
        const auto& e = ds.manifest.entries[i];
        if (seen.count(e.writer_id) && iv.count(e.text))
            ds.train_view.entries.push_back(e);
        else
            ds.heldout_indices.push_back(static_cast<int>(i));
    }
    ds.train_images.reserve(ds.train_view.entries.size());
    for (const auto& e : ds.train_view.entries) ds.train_images.push_back(read_ppm(dir + "/" + e.path));
    return ds;
}

namespace {

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<int>& idx) {
    const int64_t n = static_cast<int64_t>(idx.size());
    Tensor out = Tensor::zeros({n, 3, kGlyphH, kGlyphW});
    const int64_t stride = 3 * kGlyphH * kGlyphW;
    for (int64_t i = 0; i < n; ++i)
        std::copy_n(images[static_cast<size_t>(idx[static_cast<size_t>(i)])].data(), stride,
                    out.data() + i * stride);
    return out;
}

void write_run_manifest(const std::string& out_dir, uint64_t seed,
                        const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ofstream f(out_dir + "/run_manifest.txt", std::ios::trunc);
    f << "seed=" << seed << "\n";
    for (const auto& [k, v] : extra) f << k << "=" << v << "\n";
}

}  // namespace

void save_autoencoder(const LatentAutoencoder& ae, const std::string& path) {
    Checkpoint ckpt;
    for (const auto& [name, t] : ae.params().items()) ckpt.set(name, t);
    ckpt.set("ae.latent_std", Tensor::scalar(ae.latent_std));
    save_checkpoint(path, ckpt);
}

std::unique_ptr<LatentAutoencoder> load_autoencoder(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    auto ae = std::make_unique<LatentAutoencoder>(0);
    ckpt.load_into(ae->params().items());
    ae->latent_std = ckpt.get("ae.latent_std").item();
    ae->freeze();
    return ae;
}

AeTrainResult train_autoencoder(const RunConfig& cfg) {
    LoadedDataset ds = load_dataset(cfg.data_dir);
    if (ds.train_view.entries.empty()) throw TrainingError("train_autoencoder: empty train split");
    fs::create_directories(cfg.out_dir);

    LatentAutoencoder ae(cfg.seed);
    std::vector<Tensor> ae_params;
    for (const auto& [name, t] : ae.params().items()) ae_params.push_back(t);
    AdamW opt(ae_params, cfg.ae_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);

    RngStream batch_rng(cfg.seed, "ae/batches");
    const int B = std::min<int>(cfg.batch, static_cast<int>(ds.train_view.entries.size()));

    AeTrainResult res;
    for (int step = 0; step < cfg.ae_steps; ++step) {
        active_tape().clear();
        opt.zero_grad();
        std::vector<int> idx(static_cast<size_t>(B));
        for (auto& v : idx)
            v = static_cast<int>(batch_rng.next_below(ds.train_images.size()));
        Tensor x = stack_images(ds.train_images, idx);
        Tensor recon = ae.decode_raw(ae.encode(x));
        Tensor loss = mse(recon, x);
        const float lv = loss.item();
        if (!std::isfinite(lv))
            throw TrainingError("ae training diverged (nan) at step " + std::to_string(step));
        res.loss_curve.push_back(lv);
        backward(loss);
        opt.step();
    }
    active_tape().clear();

    // latent scale: std of all train-set latent values
    {
        NoGradGuard ng;
        double sum = 0.0, sum2 = 0.0;
        int64_t n = 0;
        for (size_t i = 0; i < ds.train_images.size(); ++i) {
            Tensor z = ae.encode(stack_images(ds.train_images, {static_cast<int>(i)}));
            for (int64_t j = 0; j < z.numel(); ++j) {
                sum += z.at(j);
                sum2 += static_cast<double>(z.at(j)) * z.at(j);
            }
            n += z.numel();
        }
        const double var = sum2 / static_cast<double>(n) - (sum / static_cast<double>(n)) * (sum / static_cast<double>(n));
        ae.latent_std = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
    }

    // held-out reconstruction error on the clamped decode path
    {
        NoGradGuard ng;
        double acc = 0.0;
        int64_t count = 0;
        for (int idx : ds.heldout_indices) {
            Tensor x = read_ppm(cfg.data_dir + "/" + ds.manifest.entries[static_cast<size_t>(idx)].path);
            Tensor xb = reshape(x, {1, 3, kGlyphH, kGlyphW});
            Tensor recon = ae.decode(ae.encode(xb));
            acc += static_cast<double>(mse(recon, xb).item()) * static_cast<double>(xb.numel());
            count += xb.numel();
        }
        res.heldout_mse = count > 0 ? static_cast<float>(acc / static_cast<double>(count))
                                    : res.loss_curve.back();
        active_tape().clear();
    }

    res.latent_std = ae.latent_std;
    res.checkpoint_path = cfg.out_dir + "/ae.ckpt";
    save_autoencoder(ae, res.checkpoint_path);
    write_run_manifest(cfg.out_dir, cfg.seed, {{"ae_batches_stream", "ae/batches"}});
    return res;
}

TrainResult train_generator(const RunConfig& cfg) {
    cfg.validate();
    LoadedDataset ds = load_dataset(cfg.data_dir);
    fs::create_directories(cfg.out_dir);
    auto ae = load_autoencoder(cfg.out_dir + "/ae.ckpt");

    GeneratorModel model(cfg, cfg.seed);
    AdamW opt(model.params.tensors(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);

    RngStream pairing_master(cfg.seed, "train/pairing");
    RngStream drop_rng(cfg.seed, "train/drop");
    RngStream diff_rng(cfg.seed, "train/diffusion");

    TrainResult res;
    res.log_path = cfg.out_dir + "/train_log.csv";
    std::ofstream log(res.log_path, std::ios::trunc);
    log << "step,L_total,L_den,L_pce,L_sce,L_saq,perplexity\n";

    const int pairs = cfg.batch / 2;
    const float inv_latent_std = 1.0f / ae->latent_std;
    const int64_t img_stride = 3 * kGlyphH * kGlyphW;

    for (int step = 0; step < cfg.train_steps; ++step) {
        active_tape().clear();
        opt.zero_grad();
        model.style.codebook().reset_usage();

        BatchPlan plan =
            plan_batch(ds.train_view, pairing_master.next_u64(), cfg.batch, /*allow_writer_reuse=*/true);
        Tensor all = Tensor::zeros({2 * pairs, 3, kGlyphH, kGlyphW});
        std::vector<std::string> tar_texts;
        for (int p = 0; p < pairs; ++p) {
            const auto& [ri, ti] = plan.pairs[static_cast<size_t>(p)];
            std::copy_n(ds.train_images[static_cast<size_t>(ri)].data(), img_stride,
                        all.data() + p * img_stride);
            std::copy_n(ds.train_images[static_cast<size_t>(ti)].data(), img_stride,
                        all.data() + (pairs + p) * img_stride);
            tar_texts.push_back(ds.train_view.entries[static_cast<size_t>(ti)].text);
        }

        StyleFeatures sf = model.style.forward(all);
        Tensor f_global_ref = slice(sf.global, 0, 0, pairs);
        Tensor f_global_tar = slice(sf.global, 0, pairs, pairs);
        Tensor f_seq_ref = slice(sf.seq, 0, 0, pairs);

        ConditioningContext ctx = model.make_context(f_seq_ref, tar_texts);
        ctx = drop_conditioning(ctx, cfg.drop_prob, drop_rng, cfg.independent_drop);

        Tensor z0;
        {
            NoGradGuard ng;
            Tensor tars = slice(all, 0, pairs, pairs);
            z0 = scale(ae->encode(tars), inv_latent_std);
        }

        DenoisingLossResult dl = denoising_loss(model.denoiser, model.schedule, z0, ctx, diff_rng);

        Tensor l_pce, l_sce, l_saq;
        if (cfg.use_pce)
            l_pce = latent_pce_loss(z0, dl.zhat0, model.pce_heads, cfg.tau, model.pce_scales).loss;
        if (cfg.use_sce) l_sce = sce_loss(f_global_tar, f_global_ref, cfg.tau);
        if (cfg.use_saq) l_saq = saq_loss(sf.f, sf.selected, cfg.beta);

        Tensor total;
        try {
            total = combined_loss(dl.loss, l_pce, l_sce, l_saq, cfg.alpha);
        } catch (const TrainingError& e) {
            throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step) +
                                " (den=" + std::to_string(dl.loss.item()) + ")");
        }

        backward(total);
        opt.step();

        StepLog sl{step, total.item(), dl.loss.item(), l_pce.defined() ? l_pce.item() : 0.0f,
                   l_sce.defined() ? l_sce.item() : 0.0f, l_saq.defined() ? l_saq.item() : 0.0f,
                   codebook_stats(model.style.codebook().usage).perplexity};
        res.log.push_back(sl);
        if (step % cfg.log_every == 0 || step + 1 == cfg.train_steps) {
            log << sl.step << "," << sl.total << "," << sl.den << "," << sl.pce << "," << sl.sce
                << "," << sl.saq << "," << sl.perplexity << "\n";
            log.flush();
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.train_steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "/gen_step%06d.ckpt", step + 1);
            save_checkpoint(cfg.out_dir + name, model.to_checkpoint());
        }
    }
    active_tape().clear();

    res.checkpoint_path = cfg.out_dir + "/generator.ckpt";
    save_checkpoint(res.checkpoint_path, model.to_checkpoint());
    write_run_manifest(cfg.out_dir, cfg.seed,
                       {{"pairing_stream", "train/pairing"},
                        {"drop_stream", "train/drop"},
                        {"diffusion_stream", "train/diffusion"}});
    return res;
}

std::unique_ptr<GeneratorModel> load_generator(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    RunConfig cfg;
    cfg.codebook_size = static_cast<int>(ckpt.get("meta.codebook_size").item());
    cfg.use_saq = ckpt.get("meta.use_saq").item() != 0.0f;
    cfg.timesteps = static_cast<int>(ckpt.get("meta.timesteps").item());
    auto model = std::make_unique<GeneratorModel>(cfg, 0);
    model->load(ckpt);
    return model;
}

Tensor sample_image(GeneratorModel& model, const LatentAutoencoder& ae, const Tensor& ref_image,
                    const std::string& text, uint64_t seed, int steps, float guidance) {
    NoGradGuard ng;
    Tensor ref = ref_image.rank() == 3
                     ? reshape(ref_image, {1, 3, kGlyphH, kGlyphW})
                     : ref_image;
    StyleFeatures sf = model.style.forward(ref);
    ConditioningContext ctx = model.make_context(sf.seq, {text});
    RngStream rng(seed, "sample");
    Tensor z = ddim_sample(model.denoiser, model.schedule, ctx, steps, guidance, rng);
    Tensor img = ae.decode(scale(z, ae.latent_std));
    active_tape().clear();
    return reshape(img, {3, kGlyphH, kGlyphW});
}

int dump_attention_maps(GeneratorModel& model, const LatentAutoencoder& ae,
                        const Tensor& ref_image, const std::string& text, int t_probe,
                        uint64_t seed, const std::string& out_dir) {
    NoGradGuard ng;
    fs::create_directories(out_dir);
    Tensor ref = ref_image.rank() == 3 ? reshape(ref_image, {1, 3, kGlyphH, kGlyphW}) : ref_image;
    StyleFeatures sf = model.style.forward(ref);
    ConditioningContext ctx = model.make_context(sf.seq, {text});

    Tensor z0 = scale(ae.encode(ref), 1.0f / ae.latent_std);
    RngStream rng(seed, "dump_attn");
    IndexArray t = IndexArray::from({1}, {t_probe});
    Tensor z_t = q_sample(model.schedule, z0, t, Tensor::randn(z0.shape(), rng));
    DenoiserOutput out = model.denoiser.forward(z_t, t, ctx, /*want_attention=*/true);

    // highest-resolution cross-attention block, heads averaged
    Tensor maps = mean(out.attention_maps[0], 1);  // [1,Tq,Tkv]
    const int64_t tq = maps.dim(1);
    const int64_t ts = sf.seq.dim(1);
    const int64_t lh = LatentAutoencoder::kLatentH, lw = LatentAutoencoder::kLatentW;
    if (tq != lh * lw) throw TrainingError("unexpected attention geometry");

    for (int64_t j = 0; j < ts; ++j) {
        Tensor m = Tensor::zeros({1, 1, lh, lw});
        float peak = 0.0f;
        for (int64_t q = 0; q < tq; ++q) {
            const float v = maps.at(q * maps.dim(2) + j);
            m.data()[q] = v;
            peak = std::max(peak, v);
        }
        if (peak > 0.0f)
            for (int64_t q = 0; q < tq; ++q) m.data()[q] /= peak;
        Tensor up = upsample_nearest2x(upsample_nearest2x(m));  // [1,1,32,96]
        char name[64];
        std::snprintf(name, sizeof(name), "/attn_style_%03lld.pgm", static_cast<long long>(j));
        write_pgm(out_dir + name, reshape(up, {kGlyphH, kGlyphW}));
    }
    active_tape().clear();
    return static_cast<int>(ts);
}

}  // namespace glyphdiff
