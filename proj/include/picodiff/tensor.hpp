#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "picodiff/errors.hpp"
#include "picodiff/rng.hpp"

namespace picodiff {

// f32 storage everywhere; statistical reductions accumulate in f64 inside the
// individual ops. Tensors are immutable once created except for their grad
// buffer, which only backward() touches.
struct TensorImpl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, bool requires_grad = false);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float value);
    static Tensor from(std::vector<int> shape, std::vector<float> values);
    static Tensor scalar(float value);
    static Tensor randn(std::vector<int> shape, Philox& rng, float stddev = 1.0f);

    bool defined() const { return impl != nullptr; }
    const std::vector<int>& shape() const { return impl->shape; }
    int ndim() const { return static_cast<int>(impl->shape.size()); }
    int dim(int i) const;  // negative indices count from the back
    int64_t numel() const { return static_cast<int64_t>(impl->data.size()); }

    float* data() { return impl->data.data(); }
    const float* data() const { return impl->data.data(); }
    float item() const;

    bool requires_grad() const { return impl && impl->requires_grad; }
    Tensor& set_requires_grad(bool rg);

    bool has_grad() const { return impl && !impl->grad.empty(); }
    float* grad() { return impl->grad.data(); }
    const float* grad() const { return impl->grad.data(); }
    void ensure_grad();
    void zero_grad();

    bool all_finite() const;

    std::shared_ptr<TensorImpl> impl;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Ordered record of executed operations. Ops are appended in forward
// execution order, which is by construction a topological order; backward
// replays the record once, in reverse.
class Tape {
public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
    size_t size() const { return ops_.size(); }
    void run_backward();

    static Tape* current();

private:
    friend class TapeScope;
    std::vector<std::function<void()>> ops_;
};

// RAII activation of a fresh tape for the current thread. Ops executed while
// a scope is alive are recorded; without one, forward passes run gradient-free.
class TapeScope {
public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    Tape& tape() { return tape_; }

private:
    Tape tape_;
    Tape* prev_;
};

// Populates grads of every requires_grad tensor reachable from `loss`.
// Requires a scalar loss produced under the currently active tape.
void backward(const Tensor& loss);

bool grad_enabled();

}  // namespace picodiff
