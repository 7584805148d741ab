#pragma once

#include "glyphdiff/nn.hpp"

namespace glyphdiff {

// ---- style contrastive enhancement ----

// One directed InfoNCE term: cosine similarities at temperature tau,
// positives per row, negatives [P, M, d] per row. Mean over the P anchors.
Tensor sce_half(const Tensor& anchor, const Tensor& positive, const Tensor& negatives, float tau);

// Bidirectional loss over a paired batch: anchors/positives swap roles, the
// negatives for pair j are every other sample's features (N-2 of them) with
// gradients blocked. Bitwise symmetric in its two arguments.
Tensor sce_loss(const Tensor& f_tar, const Tensor& f_ref, float tau);

// ---- latent patch contrastive enhancement ----

// Shallow MLP projecting flattened patches into the shared embedding space.
struct PatchEmbedder {
    static constexpr int64_t kEmbedDim = 256;
    Linear l1, l2;
    PatchEmbedder() = default;
    PatchEmbedder(ParamRegistry& reg, const std::string& name, int64_t patch_dim);
    Tensor forward(const Tensor& patches) const;  // [B,H,patch_dim] -> [B,H,256], unit rows
};

struct PatchSet {
    int scale = 0;
    int64_t count = 0;       // H_s, non-overlapping grid patches (capped at 256)
    Tensor embeddings;       // [B,H_s,256], L2-normalized rows
};

// Row-major non-overlapping grid tiling; identical ordering for true and
// generated latents so location correspondence is positional.
PatchSet extract_patches(const Tensor& latent, int scale, const PatchEmbedder& head);

// Directed patch InfoNCE: positives share a grid location, negatives are
// the other patches of the same image (gradients blocked).
Tensor latent_pce_half(const PatchSet& z, const PatchSet& z_hat, float tau);

struct PceResult {
    Tensor loss;
    std::vector<int> used_scales;
    std::vector<std::string> warnings;
};

// Bidirectional multi-scale loss, 1/(2S) normalized over applicable scales.
PceResult latent_pce_loss(const Tensor& z0_true, const Tensor& z0_pred,
                          const std::vector<PatchEmbedder>& heads, float tau,
                          const std::vector<int>& scales = {2, 4, 8});

// ---- combined objective ----

// denoising + alpha * (pce + sce + saq). Undefined tensors are treated as
// disabled and skipped entirely; with everything disabled the denoising
// term is returned as-is. Non-finite terms abort with the term name.
Tensor combined_loss(const Tensor& denoising, const Tensor& pce, const Tensor& sce,
                     const Tensor& saq, float alpha);

}  // namespace glyphdiff
