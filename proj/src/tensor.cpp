#include "picodiff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace picodiff {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), 0.0f);
    impl->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    std::fill(t.impl->data.begin(), t.impl->data.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    Tensor t;
    t.impl = std::make_shared<TensorImpl>();
    t.impl->shape = std::move(shape);
    t.impl->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

Tensor Tensor::randn(std::vector<int> shape, Philox& rng, float stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.impl->data) v = rng.normal() * stddev;
    return t;
}

int Tensor::dim(int i) const {
    int nd = ndim();
    if (i < 0) i += nd;
    if (i < 0 || i >= nd) throw ShapeError("dim index out of range for " + shape_str(impl->shape));
    return impl->shape[static_cast<size_t>(i)];
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(impl->shape));
    return impl->data[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    impl->requires_grad = rg;
    return *this;
}

void Tensor::ensure_grad() {
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
}

void Tensor::zero_grad() {
    std::fill(impl->grad.begin(), impl->grad.end(), 0.0f);
}

bool Tensor::all_finite() const {
    for (float v : impl->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape* Tape::current() { return g_current_tape; }

void Tape::run_backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

TapeScope::TapeScope() : prev_(g_current_tape) { g_current_tape = &tape_; }

TapeScope::~TapeScope() { g_current_tape = prev_; }

bool grad_enabled() { return g_current_tape != nullptr; }

void backward(const Tensor& loss) {
    if (!grad_enabled()) throw ContractError("backward() requires an active tape");
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss");
    }
    Tensor seed = loss;
    seed.ensure_grad();
    seed.impl->grad[0] = 1.0f;
    Tape::current()->run_backward();
}

}  // namespace picodiff
