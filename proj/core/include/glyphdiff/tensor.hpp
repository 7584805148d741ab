#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "glyphdiff/rng.hpp"

namespace glyphdiff {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
};

// Value-semantic handle to a dense row-major f32 array. Copying a Tensor
// aliases the same storage; ops always allocate fresh outputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor randn(Shape shape, RngStream& rng, bool requires_grad = false);
    static Tensor rand_uniform(Shape shape, float lo, float hi, RngStream& rng,
                               bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }

    float item() const;
    float at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Allocates a zero grad buffer on first use.
    std::vector<float>& grad_buffer();
    const std::vector<float>& grad_view() const { return impl_->grad; }
    void zero_grad();

    // Deep copy of values (fresh storage, no grad).
    Tensor clone() const;

    TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
    friend Tensor make_tensor(Shape shape, bool requires_grad);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Integer index container for embedding lookups, quantization codes and
// timesteps. Not differentiable.
struct IndexArray {
    Shape shape;
    std::vector<int64_t> idx;

    int64_t numel() const { return static_cast<int64_t>(idx.size()); }
    static IndexArray from(Shape shape, std::vector<int64_t> v);
};

// Execution-ordered record of backward closures. Reverse replay visits
// operations in strict reverse execution order; closures keep the tensors
// they need alive, so clear() releases all recorded intermediaries.
class Tape {
public:
    void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }
    void clear() { entries_.clear(); }
    size_t size() const { return entries_.size(); }
    void replay_reverse() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> entries_;
};

Tape& active_tape();
bool grad_recording_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Reverse pass from a scalar loss over the active tape. Repeated calls
// without zeroing accumulate additively.
void backward(const Tensor& loss);

}  // namespace glyphdiff
