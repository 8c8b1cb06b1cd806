#pragma once

#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "arfc/ops.hpp"
#include "arfc/random.hpp"
#include "arfc/tensor.hpp"

namespace arfc::nn {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor;
};

/// Parameter/buffer registry with hierarchical names ("enc0.mrffi.gate.fc1.weight").
/// Modules register members in their constructors, so they are pinned in
/// memory: neither copyable nor movable.
template <typename T>
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    void set_training(bool training);
    bool training() const noexcept { return training_; }

    std::vector<NamedTensor<T>> parameters(const std::string& prefix = "");
    std::vector<NamedTensor<T>> buffers(const std::string& prefix = "");
    std::size_t parameter_count();
    void zero_grad();

protected:
    Tensor<T>& add_parameter(std::string name, Tensor<T> value);
    Tensor<T>& add_buffer(std::string name, Tensor<T> value);
    void add_child(std::string name, Module& child);

private:
    std::deque<std::pair<std::string, Tensor<T>>> params_;
    std::deque<std::pair<std::string, Tensor<T>>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
    bool training_ = true;
};

enum class InitKind { kaiming_uniform, zeros };

/// Kaiming-uniform fan-in initialization: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int fan_in, Rng& rng);

template <typename T>
class Conv2d : public Module<T> {
public:
    Conv2d(const ConvSpec& spec, Rng& rng, InitKind init = InitKind::kaiming_uniform);
    Tensor<T> forward(const Tensor<T>& x) const;
    const ConvSpec& spec() const { return spec_; }
    Tensor<T>& weight() { return *weight_; }
    Tensor<T>& bias() { return *bias_; }
    bool has_bias() const { return bias_ != nullptr; }

private:
    ConvSpec spec_;
    Tensor<T>* weight_;
    Tensor<T>* bias_ = nullptr;
};

template <typename T>
class BatchNorm2d : public Module<T> {
public:
    explicit BatchNorm2d(int channels);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T>& gamma() { return *gamma_; }
    Tensor<T>& beta() { return *beta_; }
    Tensor<T>& running_mean() { return *mean_; }
    Tensor<T>& running_var() { return *var_; }

    static constexpr double kMomentum = 0.9;
    static constexpr double kEps = 1e-5;

private:
    Tensor<T>* gamma_;
    Tensor<T>* beta_;
    Tensor<T>* mean_;
    Tensor<T>* var_;
};

template <typename T>
class LayerNorm2d : public Module<T> {
public:
    explicit LayerNorm2d(int channels);
    Tensor<T> forward(const Tensor<T>& x) const;
    Tensor<T>& gamma() { return *gamma_; }
    Tensor<T>& beta() { return *beta_; }

private:
    Tensor<T>* gamma_;
    Tensor<T>* beta_;
};

/// Two pointwise layers with ReLU between, applied to (N, C, 1, 1)
/// descriptors: C -> hidden -> out.
template <typename T>
class Mlp : public Module<T> {
public:
    Mlp(int in, int hidden, int out, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    Conv2d<T>& fc1() { return fc1_; }
    Conv2d<T>& fc2() { return fc2_; }

private:
    Conv2d<T> fc1_;
    Conv2d<T> fc2_;
};

/// conv -> batch norm -> ReLU
template <typename T>
class ConvBnRelu : public Module<T> {
public:
    ConvBnRelu(const ConvSpec& spec, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Conv2d<T>& conv() { return conv_; }
    BatchNorm2d<T>& bn() { return bn_; }

private:
    Conv2d<T> conv_;
    BatchNorm2d<T> bn_;
};

/// Width used by the squeeze-excitation and channel-attention perceptrons.
inline int reduced_width(int channels) { return channels / 4 > 1 ? channels / 4 : 1; }

}  // namespace arfc::nn
