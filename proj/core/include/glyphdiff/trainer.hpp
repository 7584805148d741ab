#pragma once

#include <memory>

#include "glyphdiff/autoencoder.hpp"
#include "glyphdiff/checkpoint.hpp"
#include "glyphdiff/config.hpp"
#include "glyphdiff/content_encoder.hpp"
#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/objectives.hpp"
#include "glyphdiff/saq.hpp"
#include "glyphdiff/synthglyph.hpp"

namespace glyphdiff {

// Every trainable piece of the generator behind one parameter registry:
// style extractor, content encoder, U-Net, context projections and the
// patch-contrastive heads.
struct GeneratorModel {
    RunConfig cfg;
    ParamRegistry params;
    StyleExtractor style;
    ContentEncoder content;
    Denoiser denoiser;
    Linear style_proj;    // style d -> d_ctx
    Linear content_proj;  // content d -> d_ctx
    std::vector<PatchEmbedder> pce_heads;
    std::vector<int> pce_scales{2, 4, 8};
    NoiseSchedule schedule;

    GeneratorModel(const RunConfig& cfg, uint64_t seed);

    ConditioningContext make_context(const Tensor& f_seq,
                                     const std::vector<std::string>& texts) const;

    Checkpoint to_checkpoint() const;
    void load(const Checkpoint& ckpt);
};

// Dataset resident in memory: the full manifest plus the train view
// (seen writers x in-vocabulary words) with decoded images.
struct LoadedDataset {
    DatasetManifest manifest;
    DatasetManifest train_view;
    std::vector<Tensor> train_images;   // aligned with train_view.entries
    std::vector<int> heldout_indices;   // indices into manifest.entries
};
LoadedDataset load_dataset(const std::string& dir);

struct AeTrainResult {
    float heldout_mse = 0.0f;
    float latent_std = 1.0f;
    std::string checkpoint_path;
    std::vector<float> loss_curve;
};
AeTrainResult train_autoencoder(const RunConfig& cfg);

std::unique_ptr<LatentAutoencoder> load_autoencoder(const std::string& path);
void save_autoencoder(const LatentAutoencoder& ae, const std::string& path);

struct StepLog {
    int step;
    float total, den, pce, sce, saq;
    double perplexity;
};
struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<StepLog> log;
};
TrainResult train_generator(const RunConfig& cfg);

std::unique_ptr<GeneratorModel> load_generator(const std::string& path);

// SAQ(reference) -> context -> DDIM -> decode. Returns [3,32,96].
Tensor sample_image(GeneratorModel& model, const LatentAutoencoder& ae, const Tensor& ref_image,
                    const std::string& text, uint64_t seed, int steps, float guidance);

// Per-style-token spatial cross-attention mass at one timestep, upsampled to
// image size and written as PGM heatmaps. Returns the file count (= T_s).
int dump_attention_maps(GeneratorModel& model, const LatentAutoencoder& ae,
                        const Tensor& ref_image, const std::string& text, int t_probe,
                        uint64_t seed, const std::string& out_dir);

}  // namespace glyphdiff
