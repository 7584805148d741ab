#include "glyphdiff/optim.hpp"

#include <cmath>

namespace glyphdiff {

AdamW::AdamW(std::vector<Tensor> params, float lr_, float beta1_, float beta2_,
             float weight_decay_, float eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), weight_decay(weight_decay_), eps(eps_),
      params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0f);
        v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0f);
    }
}

void AdamW::step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        float* w = p.data();
        const float* g = p.grad_view().data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const int64_t n = p.numel();
        for (int64_t j = 0; j < n; ++j) {
            w[j] -= lr * weight_decay * w[j];
            m[j] = beta1 * m[j] + (1.0f - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0f - beta2) * g[j] * g[j];
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace glyphdiff
