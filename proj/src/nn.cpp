#include "arfc/nn.hpp"

#include <cmath>

namespace arfc::nn {

template <typename T>
void Module<T>::set_training(bool training)
{
    training_ = training;
    for (auto& [name, child] : children_)
        child->set_training(training);
}

template <typename T>
std::vector<NamedTensor<T>> Module<T>::parameters(const std::string& prefix)
{
    std::vector<NamedTensor<T>> out;
    for (auto& [name, t] : params_)
        out.push_back({prefix + name, &t});
    for (auto& [name, child] : children_)
        for (auto& p : child->parameters(prefix + name + "."))
            out.push_back(std::move(p));
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> Module<T>::buffers(const std::string& prefix)
{
    std::vector<NamedTensor<T>> out;
    for (auto& [name, t] : buffers_)
        out.push_back({prefix + name, &t});
    for (auto& [name, child] : children_)
        for (auto& b : child->buffers(prefix + name + "."))
            out.push_back(std::move(b));
    return out;
}

template <typename T>
std::size_t Module<T>::parameter_count()
{
    std::size_t total = 0;
    for (auto& p : parameters())
        total += p.tensor->numel();
    return total;
}

template <typename T>
void Module<T>::zero_grad()
{
    for (auto& p : parameters())
        p.tensor->zero_grad();
}

template <typename T>
Tensor<T>& Module<T>::add_parameter(std::string name, Tensor<T> value)
{
    value.set_requires_grad(true);
    params_.emplace_back(std::move(name), std::move(value));
    return params_.back().second;
}

template <typename T>
Tensor<T>& Module<T>::add_buffer(std::string name, Tensor<T> value)
{
    buffers_.emplace_back(std::move(name), std::move(value));
    return buffers_.back().second;
}

template <typename T>
void Module<T>::add_child(std::string name, Module& child)
{
    children_.emplace_back(std::move(name), &child);
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int fan_in, Rng& rng)
{
    const double bound = std::sqrt(6.0 / std::max(fan_in, 1));
    Tensor<T> t(shape);
    for (T& v : t.data_mut())
        v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
Conv2d<T>::Conv2d(const ConvSpec& spec, Rng& rng, InitKind init) : spec_(spec)
{
    spec_.validate();
    const Shape ws = spec_.weight_shape();
    const int fan_in = ws.c * ws.h * ws.w;
    weight_ = &this->add_parameter("weight", init == InitKind::zeros ? Tensor<T>(ws)
                                                                      : kaiming_uniform<T>(ws, fan_in, rng));
    if (spec_.bias)
        bias_ = &this->add_parameter("bias", Tensor<T>(Shape{1, spec_.out_channels, 1, 1}));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const
{
    return conv2d(x, spec_, *weight_, bias_ ? *bias_ : Tensor<T>{});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels)
{
    const Shape s{1, channels, 1, 1};
    gamma_ = &this->add_parameter("gamma", Tensor<T>(s, T(1)));
    beta_ = &this->add_parameter("beta", Tensor<T>(s));
    mean_ = &this->add_buffer("running_mean", Tensor<T>(s));
    var_ = &this->add_buffer("running_var", Tensor<T>(s, T(1)));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x)
{
    return batch_norm(x, *gamma_, *beta_, *mean_, *var_, this->training(), kMomentum, kEps);
}

template <typename T>
LayerNorm2d<T>::LayerNorm2d(int channels)
{
    const Shape s{1, channels, 1, 1};
    gamma_ = &this->add_parameter("gamma", Tensor<T>(s, T(1)));
    beta_ = &this->add_parameter("beta", Tensor<T>(s));
}

template <typename T>
Tensor<T> LayerNorm2d<T>::forward(const Tensor<T>& x) const
{
    return layer_norm(x, *gamma_, *beta_);
}

template <typename T>
Mlp<T>::Mlp(int in, int hidden, int out, Rng& rng)
    : fc1_(ConvSpec::pointwise(in, hidden), rng), fc2_(ConvSpec::pointwise(hidden, out), rng)
{
    this->add_child("fc1", fc1_);
    this->add_child("fc2", fc2_);
}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x) const
{
    return fc2_.forward(relu(fc1_.forward(x)));
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(const ConvSpec& spec, Rng& rng) : conv_(spec, rng), bn_(spec.out_channels)
{
    this->add_child("conv", conv_);
    this->add_child("bn", bn_);
}

template <typename T>
Tensor<T> ConvBnRelu<T>::forward(const Tensor<T>& x)
{
    return relu(bn_.forward(conv_.forward(x)));
}

#define ARFC_INSTANTIATE(T)                                         \
    template class Module<T>;                                       \
    template Tensor<T> kaiming_uniform<T>(Shape, int, Rng&);        \
    template class Conv2d<T>;                                       \
    template class BatchNorm2d<T>;                                  \
    template class LayerNorm2d<T>;                                  \
    template class Mlp<T>;                                          \
    template class ConvBnRelu<T>;

ARFC_INSTANTIATE(float)
ARFC_INSTANTIATE(double)

}  // namespace arfc::nn
