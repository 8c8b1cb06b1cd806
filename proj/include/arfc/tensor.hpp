#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <algorithm>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace arfc {

/// Shape or channel-count mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid layer or run configuration, detected before any data flows.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced by a forward or backward pass, or a failed gradient check.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents; the message carries the byte offset when known.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// (batch, channel, rows, cols). Every tensor in the engine is rank 4.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const noexcept
    {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    bool valid() const noexcept { return n >= 0 && c >= 0 && h >= 0 && w >= 0; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

// One recorded primitive. The adjoint rule receives the output (value and
// accumulated gradient) and adds its contribution into the inputs' grads.
template <typename T>
struct Node {
    std::string name;
    std::vector<Tensor<T>> inputs;
    std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node<T>> grad_fn;
};

}  // namespace detail

/// Dense NCHW array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Ops never mutate
/// their inputs; only leaves (parameters, probes) are written in place.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    std::span<T> data_mut() { return impl_->data; }
    const T* ptr() const { return impl_->data.data(); }
    T* ptr_mut() { return impl_->data.data(); }

    std::size_t index(int n, int c, int h, int w) const
    {
        const Shape& s = impl_->shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
    }
    T operator()(int n, int c, int h, int w) const { return impl_->data[index(n, c, h, w)]; }
    T& at(int n, int c, int h, int w) { return impl_->data[index(n, c, h, w)]; }
    /// Overwrites every value in place (leaves only).
    void fill(T value) { std::fill(impl_->data.begin(), impl_->data.end(), value); }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const { return !impl_->grad_fn; }
    const std::shared_ptr<detail::Node<T>>& grad_fn() const { return impl_->grad_fn; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    /// Gradient buffer, zero-allocated on first access.
    std::span<T> grad_mut();
    void zero_grad();

    /// Same values, fresh storage, no graph history.
    Tensor detach() const;

    /// Reverse-mode pass seeded with ones (intended for scalar losses).
    void backward() const;
    void backward(std::span<const T> seed) const;

    detail::TensorImpl<T>* impl() const noexcept { return impl_.get(); }

private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Topologically ordered record of the primitives that produced a tensor.
template <typename T>
class Graph {
public:
    static Graph trace(const Tensor<T>& root);

    /// Tensors in execution order; every node's inputs precede it.
    const std::vector<Tensor<T>>& order() const { return order_; }
    std::size_t node_count() const;

    /// Seeds the root gradient and runs every adjoint rule once, in reverse.
    void backward(std::span<const T> seed) const;

private:
    std::vector<Tensor<T>> order_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled() noexcept;

/// Fingerprint of the discrete choices made by piecewise ops (ReLU signs,
/// max and median picks, bilinear sampling cells) while alive. Two
/// evaluations with equal fingerprints lie on the same smooth piece.
/// Not nestable; the traced graph must be built on one thread.
class BranchTrace {
public:
    BranchTrace();
    ~BranchTrace();
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    std::uint64_t value() const noexcept;
};

namespace detail {

template <typename T>
std::span<T> grad_of(const Tensor<T>& t)
{
    return const_cast<Tensor<T>&>(t).grad_mut();
}

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs)
{
    if (!grad_mode_enabled())
        return false;
    for (const Tensor<T>* t : inputs)
        if (t != nullptr && t->defined() && t->requires_grad())
            return true;
    return false;
}

template <typename T>
void record(Tensor<T>& out, std::string name, std::vector<Tensor<T>> inputs,
            std::function<void(const TensorImpl<T>&)> backward);

/// Throws NumericError naming `op` if any value is NaN or infinite.
template <typename T>
void check_finite(std::span<const T> values, const char* op);

void require(bool condition, const std::string& message);

bool branch_trace_active() noexcept;
void trace_branch(std::uint64_t word) noexcept;

}  // namespace detail

}  // namespace arfc
