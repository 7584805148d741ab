#pragma once

#include <cstdint>
#include <string>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// Run settings; file form is UTF-8 key=value lines ('#' comments allowed),
// unknown keys are rejected. Command-line flags override file values.
struct RunConfig {
    std::string data_dir = "data";
    std::string out_dir = "out";
    uint64_t seed = 1;

    // dataset
    int writers = 8;
    int words_per_writer = 64;
    float seen_fraction = 0.75f;
    float iv_fraction = 0.75f;

    // model / objectives
    int codebook_size = 128;
    float tau = 0.1f;
    float alpha = 0.1f;
    float beta = 0.25f;
    bool use_saq = true;
    bool use_sce = true;
    bool use_pce = true;

    // diffusion
    int timesteps = 1000;
    float guidance_scale = 7.5f;
    float drop_prob = 0.2f;
    bool independent_drop = false;
    int sample_steps = 50;

    // optimization
    int train_steps = 2000;
    int ae_steps = 2000;
    int batch = 16;
    float lr = 1e-4f;
    float ae_lr = 1e-3f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float weight_decay = 0.01f;
    int checkpoint_every = 1000;
    int log_every = 1;

    void validate() const;
};

// Applies one key=value setting; unknown key or bad value -> ConfigError.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_config_file(const std::string& path);

}  // namespace glyphdiff
