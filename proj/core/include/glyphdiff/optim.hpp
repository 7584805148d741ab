#pragma once

#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

// Decoupled weight decay Adam. Updates parameter data in place; moment
// buffers live here so the same parameter set must be passed for the life of
// the optimizer.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
          float weight_decay = 0.01f, float eps = 1e-8f);

    void step();
    void zero_grad();

    float lr;
    float beta1, beta2, weight_decay, eps;
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace glyphdiff
