#include "arfc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace arfc {

std::string Shape::str() const
{
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
           std::to_string(w) + ")";
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_mode_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {
bool g_trace_on = false;
std::uint64_t g_trace = 0;
}

BranchTrace::BranchTrace()
{
    if (g_trace_on)
        throw std::logic_error("BranchTrace is not nestable");
    g_trace_on = true;
    g_trace = 0xcbf29ce484222325ULL;
}
BranchTrace::~BranchTrace() { g_trace_on = false; }
std::uint64_t BranchTrace::value() const noexcept { return g_trace; }

namespace detail {
bool branch_trace_active() noexcept { return g_trace_on; }

void trace_branch(std::uint64_t word) noexcept
{
    word += 0x9e3779b97f4a7c15ULL;
    word = (word ^ (word >> 30)) * 0xbf58476d1ce4e5b9ULL;
    word = (word ^ (word >> 27)) * 0x94d049bb133111ebULL;
    g_trace = (g_trace ^ word ^ (word >> 31)) * 0x100000001b3ULL;
}
}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorImpl<T>>())
{
    if (!shape.valid())
        throw DimensionError("negative extent in shape " + shape.str());
    impl_->shape = shape;
    impl_->data.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>())
{
    if (!shape.valid() || values.size() != shape.numel())
        throw DimensionError("tensor of shape " + shape.str() + " given " + std::to_string(values.size()) +
                             " values");
    impl_->shape = shape;
    impl_->data = std::move(values);
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value)
{
    impl_->requires_grad = value;
    return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut()
{
    if (impl_->grad.empty())
        impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad()
{
    std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return Tensor<T>(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::backward() const
{
    std::vector<T> ones(numel(), T(1));
    backward(ones);
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) const
{
    Graph<T>::trace(*this).backward(seed);
}

template <typename T>
Graph<T> Graph<T>::trace(const Tensor<T>& root)
{
    Graph<T> graph;
    std::unordered_set<const detail::TensorImpl<T>*> seen;
    // Iterative post-order DFS: (tensor, next input index).
    std::vector<std::pair<Tensor<T>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.impl());
    while (!stack.empty()) {
        auto& [tensor, next] = stack.back();
        const auto& fn = tensor.grad_fn();
        if (fn && next < fn->inputs.size()) {
            const Tensor<T>& child = fn->inputs[next++];
            if (child.defined() && child.requires_grad() && seen.insert(child.impl()).second)
                stack.emplace_back(child, 0);
            continue;
        }
        graph.order_.push_back(tensor);
        stack.pop_back();
    }
    return graph;
}

template <typename T>
std::size_t Graph<T>::node_count() const
{
    return static_cast<std::size_t>(
        std::count_if(order_.begin(), order_.end(), [](const Tensor<T>& t) { return !t.is_leaf(); }));
}

template <typename T>
void Graph<T>::backward(std::span<const T> seed) const
{
    if (order_.empty())
        return;
    Tensor<T> root = order_.back();
    if (!root.requires_grad())
        throw ConfigError("backward() on a tensor that does not require grad");
    if (seed.size() != root.numel())
        throw DimensionError("backward seed has " + std::to_string(seed.size()) + " values, expected " +
                             std::to_string(root.numel()));
    auto g = root.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += seed[i];

    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Tensor<T> t = *it;
        const auto& fn = t.grad_fn();
        if (!fn)
            continue;
        if (!t.has_grad())
            continue;  // output unused by the loss
        detail::check_finite<T>(t.grad(), fn->name.c_str());
        fn->backward(*t.impl());
        // Intermediate adjoints are not retained.
        std::vector<T>().swap(t.impl()->grad);
    }
    for (const Tensor<T>& t : order_)
        if (t.is_leaf() && t.has_grad())
            detail::check_finite<T>(t.grad(), "leaf gradient");
}

namespace detail {

template <typename T>
void record(Tensor<T>& out, std::string name, std::vector<Tensor<T>> inputs,
            std::function<void(const TensorImpl<T>&)> backward)
{
    auto node = std::make_shared<Node<T>>();
    node->name = std::move(name);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->grad_fn = std::move(node);
    out.impl()->requires_grad = true;
}

template <typename T>
void check_finite(std::span<const T> values, const char* op)
{
    // v * 0 is NaN exactly when v is not finite.
    T probe = 0;
#pragma omp simd reduction(+ : probe)
    for (std::size_t i = 0; i < values.size(); ++i)
        probe += values[i] * T(0);
    if (probe == 0)
        return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw NumericError(std::string("non-finite value at flat index ") + std::to_string(i) + " in " + op);
    }
}

void require(bool condition, const std::string& message)
{
    if (!condition)
        throw DimensionError(message);
}

template void record<float>(Tensor<float>&, std::string, std::vector<Tensor<float>>,
                            std::function<void(const TensorImpl<float>&)>);
template void record<double>(Tensor<double>&, std::string, std::vector<Tensor<double>>,
                             std::function<void(const TensorImpl<double>&)>);
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace arfc
