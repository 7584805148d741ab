#include "glyphdiff/objectives.hpp"

#include <cmath>

#include "glyphdiff/synthglyph.hpp"

namespace glyphdiff {

namespace {

void check_tau(float tau) {
    if (tau <= 0.0f) throw ConfigError("temperature must be positive");
}

Tensor offdiag_mask(int64_t n) {
    Tensor m = Tensor::full({n, n}, 1.0f);
    for (int64_t i = 0; i < n; ++i) m.data()[i * n + i] = 0.0f;
    return m;
}

// per-row logit ceiling over {pos, rows of the neg matrices}, as a non-grad
// constant; fp max is exact so this is order-insensitive
Tensor row_ceiling(const Tensor& pos, std::initializer_list<const Tensor*> neg_mats) {
    Tensor m = Tensor::zeros(pos.shape());
    const int64_t rows = pos.numel();
    for (int64_t r = 0; r < rows; ++r) m.data()[r] = pos.at(r);
    for (const Tensor* mat : neg_mats) {
        const int64_t cols = mat->dim(mat->rank() - 1);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c)
                m.data()[r] = std::max(m.data()[r], mat->at(r * cols + c));
    }
    return m;
}

}  // namespace

Tensor sce_half(const Tensor& anchor, const Tensor& positive, const Tensor& negatives, float tau) {
    check_tau(tau);
    if (anchor.rank() != 2 || positive.shape() != anchor.shape() || negatives.rank() != 3 ||
        negatives.dim(0) != anchor.dim(0) || negatives.dim(2) != anchor.dim(1))
        throw ShapeError("sce_half: expected anchor/positive [P,d], negatives [P,M,d]");
    const int64_t P = anchor.dim(0), d = anchor.dim(1);

    Tensor na = l2_normalize_rows(anchor);
    Tensor np = l2_normalize_rows(positive);
    Tensor nn = l2_normalize_rows(negatives);

    Tensor pos_logit = scale(sum(mul(na, np), -1), 1.0f / tau);  // [P]
    Tensor neg_logits = scale(
        reshape(matmul(nn, reshape(na, {P, d, 1})), {P, negatives.dim(1)}), 1.0f / tau);
    Tensor ceil = row_ceiling(pos_logit, {&neg_logits});
    Tensor neg_sum = sum(exp(sub(neg_logits, reshape(ceil, {P, 1}))), -1);
    Tensor denom = add(exp(sub(pos_logit, ceil)), neg_sum);
    return mean(sub(add(log(denom), ceil), pos_logit));
}

Tensor sce_loss(const Tensor& f_tar, const Tensor& f_ref, float tau) {
    check_tau(tau);
    if (f_tar.rank() != 2 || f_tar.shape() != f_ref.shape())
        throw ShapeError("sce_loss: expected matching [P,d] feature batches");
    const int64_t P = f_tar.dim(0);
    if (P < 2) throw ConfigError("sce_loss: need at least 2 pairs, got " + std::to_string(P));

    Tensor nt = l2_normalize_rows(f_tar);
    Tensor nr = l2_normalize_rows(f_ref);
    Tensor nt_sg = stop_gradient(nt);
    Tensor nr_sg = stop_gradient(nr);
    Tensor mask = offdiag_mask(P);
    const float inv_tau = 1.0f / tau;

    // negatives are grouped per opposing pair so the exp-sum is invariant
    // under swapping the target/reference roles (fp addition commutes, and
    // the logit ceiling is an exact max over the same multiset)
    auto directed = [&](const Tensor& a, const Tensor& b) {
        Tensor pos_logit = scale(sum(mul(a, b), -1), inv_tau);  // [P]
        Tensor l_t = scale(matmul(a, transpose(nt_sg, {1, 0})), inv_tau);
        Tensor l_r = scale(matmul(a, transpose(nr_sg, {1, 0})), inv_tau);
        Tensor ceil = row_ceiling(pos_logit, {&l_t, &l_r});
        Tensor ceil_col = reshape(ceil, {P, 1});
        Tensor pairsum = add(exp(sub(l_t, ceil_col)), exp(sub(l_r, ceil_col)));
        Tensor neg_sum = sum(mul(pairsum, mask), -1);           // [P]
        Tensor denom = add(exp(sub(pos_logit, ceil)), neg_sum);
        return mean(sub(add(log(denom), ceil), pos_logit));
    };
    return add(scale(directed(nt, nr), 0.5f), scale(directed(nr, nt), 0.5f));
}

PatchEmbedder::PatchEmbedder(ParamRegistry& reg, const std::string& name, int64_t patch_dim) {
    l1 = Linear(reg, name + ".l1", patch_dim, kEmbedDim);
    l2 = Linear(reg, name + ".l2", kEmbedDim, kEmbedDim);
}

Tensor PatchEmbedder::forward(const Tensor& patches) const {
    return l2_normalize_rows(l2.forward(relu(l1.forward(patches))));
}

PatchSet extract_patches(const Tensor& latent, int scale, const PatchEmbedder& head) {
    if (latent.rank() != 4) throw ShapeError("extract_patches expects [B,c,h,w]");
    const int64_t B = latent.dim(0), c = latent.dim(1), h = latent.dim(2), w = latent.dim(3);
    if (scale > h || scale > w)
        throw ShapeError("extract_patches: scale " + std::to_string(scale) +
                         " larger than latent " + shape_str(latent.shape()));
    const int64_t gh = h / scale, gw = w / scale;
    const int64_t count = std::min<int64_t>(gh * gw, 256);

    std::vector<Tensor> cells;
    cells.reserve(static_cast<size_t>(count));
    for (int64_t gy = 0; gy < gh && static_cast<int64_t>(cells.size()) < count; ++gy) {
        Tensor row = slice(latent, 2, gy * scale, scale);  // [B,c,s,w]
        for (int64_t gx = 0; gx < gw && static_cast<int64_t>(cells.size()) < count; ++gx)
            cells.push_back(
                reshape(slice(row, 3, gx * scale, scale), {B, 1, c * scale * scale}));
    }
    PatchSet out;
    out.scale = scale;
    out.count = count;
    out.embeddings = head.forward(concat(cells, 1));  // [B,H,256]
    return out;
}

Tensor latent_pce_half(const PatchSet& z, const PatchSet& z_hat, float tau) {
    check_tau(tau);
    if (z.scale != z_hat.scale || z.count != z_hat.count ||
        z.embeddings.shape() != z_hat.embeddings.shape())
        throw ShapeError("latent_pce_half: mismatched patch sets");
    const int64_t H = z.count;
    if (H < 2) throw ConfigError("latent_pce_half: no negatives with H < 2");
    const float inv_tau = 1.0f / tau;

    Tensor pos_logit = scale(sum(mul(z.embeddings, z_hat.embeddings), -1), inv_tau);  // [B,H]
    Tensor neg_logits = scale(
        matmul(z.embeddings, transpose(stop_gradient(z_hat.embeddings), {0, 2, 1})), inv_tau);
    const int64_t B = pos_logit.dim(0);
    Tensor ceil = row_ceiling(pos_logit, {&neg_logits});
    Tensor ceil_col = reshape(ceil, {B, H, 1});
    Tensor neg_sum = sum(mul(exp(sub(neg_logits, ceil_col)), reshape(offdiag_mask(H), {1, H, H})), -1);
    Tensor denom = add(exp(sub(pos_logit, ceil)), neg_sum);
    return mean(sub(add(log(denom), ceil), pos_logit));
}

PceResult latent_pce_loss(const Tensor& z0_true, const Tensor& z0_pred,
                          const std::vector<PatchEmbedder>& heads, float tau,
                          const std::vector<int>& scales) {
    if (z0_true.shape() != z0_pred.shape()) throw ShapeError("latent_pce_loss: latent shape mismatch");
    if (heads.size() != scales.size()) throw ConfigError("latent_pce_loss: one head per scale");
    const int64_t h = z0_true.dim(2), w = z0_true.dim(3);

    PceResult r;
    Tensor acc;
    for (size_t i = 0; i < scales.size(); ++i) {
        const int s = scales[i];
        if (s > h || s > w) {
            r.warnings.push_back("scale " + std::to_string(s) + " skipped: latent too small");
            continue;
        }
        PatchSet pt = extract_patches(z0_true, s, heads[i]);
        PatchSet pp = extract_patches(z0_pred, s, heads[i]);
        r.used_scales.push_back(s);
        if (pt.count < 2) {
            r.warnings.push_back("scale " + std::to_string(s) + " contributes 0: single patch");
            continue;
        }
        Tensor both = add(latent_pce_half(pt, pp, tau), latent_pce_half(pp, pt, tau));
        acc = acc.defined() ? add(acc, both) : both;
    }
    const int S = static_cast<int>(r.used_scales.size());
    r.loss = acc.defined() && S > 0 ? scale(acc, 1.0f / (2.0f * static_cast<float>(S)))
                                    : Tensor::scalar(0.0f);
    return r;
}

Tensor combined_loss(const Tensor& denoising, const Tensor& pce, const Tensor& sce,
                     const Tensor& saq, float alpha) {
    auto check = [](const Tensor& t, const char* name) {
        if (t.defined() && !std::isfinite(t.item()))
            throw TrainingError(std::string("non-finite loss term: ") + name);
    };
    check(denoising, "denoising");
    check(pce, "pce");
    check(sce, "sce");
    check(saq, "saq");
    Tensor aux;
    for (const Tensor* t : {&pce, &sce, &saq}) {
        if (!t->defined()) continue;
        aux = aux.defined() ? add(aux, *t) : *t;
    }
    if (!aux.defined()) return denoising;
    return add(denoising, scale(aux, alpha));
}

}  // namespace glyphdiff
