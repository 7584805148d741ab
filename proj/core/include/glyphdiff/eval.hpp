#pragma once

#include <map>
#include <optional>

#include "glyphdiff/trainer.hpp"

namespace glyphdiff {

// Fréchet distance between Gaussian fits of two feature sets:
// ||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}). Single-sample sets get a
// zero covariance.
double frechet_distance(const std::vector<std::vector<float>>& a,
                        const std::vector<std::vector<float>>& b);

double silhouette_score(const std::vector<std::vector<float>>& feats,
                        const std::vector<int>& labels);

// 1-NN retrieval: each query is assigned the label of its nearest reference.
double knn_accuracy(const std::vector<std::vector<float>>& ref_feats,
                    const std::vector<int>& ref_labels,
                    const std::vector<std::vector<float>>& query_feats,
                    const std::vector<int>& query_labels);

// Ridge regression probe (closed form); returns per-target MAE on held-out.
std::vector<double> ridge_probe_mae(const std::vector<std::vector<float>>& train_x,
                                    const std::vector<std::vector<float>>& train_y,
                                    const std::vector<std::vector<float>>& test_x,
                                    const std::vector<std::vector<float>>& test_y,
                                    double lambda = 1e-3);

// Moment-based slant estimate of a rendered/generated glyph image [3,H,W]:
// covariance between ink column positions and height above the baseline.
// The sign is the slant-sign probe.
float estimate_slant(const Tensor& image);

// flattened AE latents, the feature space of the Fréchet metric
std::vector<std::vector<float>> latent_features(const LatentAutoencoder& ae,
                                                const std::vector<Tensor>& images);

struct ScenarioMetrics {
    int count = 0;
    double frechet = 0.0;
    bool present = false;
};

struct EvalReport {
    double codebook_perplexity = 0.0;
    double codebook_usage = 0.0;
    double writer_knn_accuracy = 0.0;
    double silhouette = 0.0;
    double slant_mae = 0.0;
    double stroke_mae = 0.0;
    double ink_mae = 0.0;
    double frechet_overall = 0.0;
    std::map<std::string, ScenarioMetrics> scenarios;  // IV-S / OOV-S / IV-U / OOV-U
    std::string to_json() const;
};

struct EvalOptions {
    int samples_per_bucket = 24;  // generation budget per scenario
    int sample_steps = 50;
    float guidance = 7.5f;
    uint64_t seed = 1;
};

EvalReport evaluate(GeneratorModel& model, const LatentAutoencoder& ae,
                    const DatasetManifest& manifest, const EvalOptions& opts);

}  // namespace glyphdiff
