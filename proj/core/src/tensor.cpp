#include "glyphdiff/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace glyphdiff {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor make_tensor(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), 0.0f);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return make_tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = make_tensor(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    Tensor t = make_tensor(std::move(shape), requires_grad);
    t.vec() = std::move(data);
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, RngStream& rng, bool requires_grad) {
    Tensor t = make_tensor(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = rng.normal();
    return t;
}

Tensor Tensor::rand_uniform(Shape shape, float lo, float hi, RngStream& rng, bool requires_grad) {
    Tensor t = make_tensor(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

float Tensor::item() const {
    if (numel() != 1) throw UsageError("item() requires a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

std::vector<float>& Tensor::grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
}

Tensor Tensor::clone() const {
    Tensor t = make_tensor(impl_->shape, impl_->requires_grad);
    t.vec() = impl_->data;
    return t;
}

IndexArray IndexArray::from(Shape shape, std::vector<int64_t> v) {
    if (shape_numel(shape) != static_cast<int64_t>(v.size()))
        throw ShapeError("IndexArray: shape/data mismatch");
    return IndexArray{std::move(shape), std::move(v)};
}

namespace {
Tape g_tape;
bool g_recording = true;
}  // namespace

Tape& active_tape() { return g_tape; }
bool grad_recording_enabled() { return g_recording; }

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.impl()->grad.resize(1, 0.0f);
    loss.impl()->grad[0] += 1.0f;
    g_tape.replay_reverse();
}

}  // namespace glyphdiff
