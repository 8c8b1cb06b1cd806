#include "arfc/mrffi.hpp"

namespace arfc {

namespace {

int quarter_of(int out_channels, const char* who)
{
    if (out_channels < 4 || out_channels % 4 != 0)
        throw ConfigError(std::string(who) + ": output channels must be a positive multiple of 4, got " +
                          std::to_string(out_channels));
    return out_channels / 4;
}

constexpr int tap_index(const std::array<int, 2>& tap) { return (tap[0] + 1) * 3 + (tap[1] + 1); }

}  // namespace

template <typename T>
Msdc<T>::Msdc(int in_channels, int out_channels, Rng& rng)
    : mid_(quarter_of(out_channels, "MSDC")),
      lane1_(ConvSpec::same(in_channels, mid_, 3, 3, kDilations[0]), rng),
      lane2_(ConvSpec::same(in_channels, mid_, 3, 3, kDilations[1]), rng),
      lane3_(ConvSpec::same(in_channels, mid_, 3, 3, kDilations[2]), rng),
      lanes_{&lane1_, &lane2_, &lane3_},
      gap_conv_(ConvSpec::pointwise(in_channels, mid_), rng),
      fuse_(ConvSpec::pointwise(4 * mid_, out_channels), rng)
{
    this->add_child("d1", lane1_);
    this->add_child("d2", lane2_);
    this->add_child("d3", lane3_);
    this->add_child("gap", gap_conv_);
    this->add_child("fuse", fuse_);
}

template <typename T>
Tensor<T> Msdc<T>::forward(const Tensor<T>& x)
{
    const Shape s = x.shape();
    const Tensor<T> g = relu(gap_conv_.forward(global_pool(x, GlobalPoolKind::avg)));
    return fuse_.forward(
        concat_channels<T>({lane1_.forward(x), lane2_.forward(x), lane3_.forward(x), broadcast_spatial(g, s.h, s.w)}));
}

template <typename T>
Dcn<T>::Dcn(int in_channels, int out_channels, Rng& rng)
    : offset_conv_(ConvSpec::same(in_channels, 18, 3, 3), rng, nn::InitKind::zeros),
      modulation_conv_(ConvSpec::same(in_channels, 9, 3, 3), rng, nn::InitKind::zeros),
      bn_(out_channels)
{
    const Shape ws{out_channels, in_channels, 3, 3};
    this->add_child("offset", offset_conv_);
    this->add_child("modulation", modulation_conv_);
    weight_ = &this->add_parameter("weight", nn::kaiming_uniform<T>(ws, in_channels * 9, rng));
    bias_ = &this->add_parameter("bias", Tensor<T>(Shape{1, out_channels, 1, 1}));
    this->add_child("bn", bn_);
}

template <typename T>
Tensor<T> Dcn<T>::aggregate(const Tensor<T>& x) const
{
    return deform_conv2d(x, offset_conv_.forward(x), sigmoid(modulation_conv_.forward(x)), *weight_, *bias_);
}

template <typename T>
Tensor<T> Dcn<T>::forward(const Tensor<T>& x)
{
    return relu(bn_.forward(aggregate(x)));
}

template <typename T>
Tensor<T> difference_kernel(const Tensor<T>& hv, const Tensor<T>& dg)
{
    const Shape s = hv.shape();
    if (s.h != 1 || s.w != 5 || dg.shape() != s)
        throw DimensionError("difference_kernel: expected two (Co, Ci, 1, 5) tap tensors, got " + s.str() + " and " +
                             dg.shape().str());
    const int pairs = s.n * s.c;
    Tensor<T> out(Shape{s.n, s.c, 3, 3});
    T* k = out.ptr_mut();
    for (int p = 0; p < pairs; ++p) {
        T* kp = k + 9 * p;
        for (const auto& [taps, src] : {std::pair{&kTapsHV, hv.ptr()}, std::pair{&kTapsDG, dg.ptr()}}) {
            T total = 0;
            for (int t = 0; t < 5; ++t) {
                const T v = src[5 * p + t];
                kp[tap_index((*taps)[t])] += v;
                total += v;
            }
            kp[4] -= total;
        }
    }
    if (detail::needs_grad<T>({&hv, &dg}))
        detail::record<T>(out, "difference_kernel", {hv, dg}, [hv, dg, pairs](const detail::TensorImpl<T>& res) {
            for (const auto& [taps, t_ptr] : {std::pair{&kTapsHV, &hv}, std::pair{&kTapsDG, &dg}}) {
                if (!t_ptr->requires_grad())
                    continue;
                auto d = detail::grad_of(*t_ptr);
                for (int p = 0; p < pairs; ++p) {
                    const T* g = res.grad.data() + 9 * p;
                    for (int t = 0; t < 5; ++t)
                        d[5 * p + t] += g[tap_index((*taps)[t])] - g[4];
                }
            }
        });
    return out;
}

template <typename T>
Mddc<T>::Mddc(int in_channels, int out_channels, Rng& rng) : in_(in_channels), out_(out_channels), bn_(out_channels)
{
    const Shape ts{out_channels, in_channels, 1, 5};
    // Four live taps per set feed a 3x3 footprint.
    hv_ = &this->add_parameter("hv", nn::kaiming_uniform<T>(ts, in_channels * 9, rng));
    dg_ = &this->add_parameter("dg", nn::kaiming_uniform<T>(ts, in_channels * 9, rng));
    this->add_child("bn", bn_);
}

template <typename T>
Tensor<T> Mddc<T>::aggregate(const Tensor<T>& x) const
{
    ConvSpec spec;
    spec.in_channels = in_;
    spec.out_channels = out_;
    spec.padding = {};
    spec.bias = false;
    return conv2d(pad_replicate(x, Padding::uniform(1)), spec, kernel());
}

template <typename T>
Tensor<T> Mddc<T>::forward(const Tensor<T>& x)
{
    return relu(bn_.forward(aggregate(x)));
}

template <typename T>
GatedUnit<T>::GatedUnit(int in_channels, int hidden, Rng& rng) : mlp_(in_channels, hidden, 3, rng)
{
    if (hidden < 1)
        throw ConfigError("gated unit: hidden width must be positive");
    this->add_child("mlp", mlp_);
}

template <typename T>
Tensor<T> GatedUnit<T>::scores(const Tensor<T>& x) const
{
    return mlp_.forward(global_pool(x, GlobalPoolKind::avg));
}

template <typename T>
Tensor<T> GatedUnit<T>::forward(const Tensor<T>& x) const
{
    return softmax_channels(scores(x));
}

template <typename T>
Mrffi<T>::Mrffi(int in_channels, int out_channels, Rng& rng, MrffiOptions options)
    : msdc_(in_channels, out_channels, rng),
      dcn_(in_channels, out_channels, rng),
      mddc_(in_channels, out_channels, rng),
      gate_(in_channels, options.gate_hidden, rng)
{
    this->add_child("msdc", msdc_);
    this->add_child("dcn", dcn_);
    this->add_child("mddc", mddc_);
    this->add_child("gate", gate_);
}

template <typename T>
Tensor<T> Mrffi<T>::gate_weights(const Tensor<T>& x) const
{
    if (!pinned_)
        return gate_.forward(x);
    Tensor<T> w(Shape{x.shape().n, 3, 1, 1});
    for (int n = 0; n < x.shape().n; ++n)
        for (int i = 0; i < 3; ++i)
            w.at(n, i, 0, 0) = static_cast<T>((*pinned_)[i]);
    return w;
}

template <typename T>
Tensor<T> Mrffi<T>::forward(const Tensor<T>& x)
{
    const Tensor<T> w = gate_weights(x);
    const std::array<Tensor<T>, 3> experts{msdc_.forward(x), dcn_.forward(x), mddc_.forward(x)};
    std::vector<Tensor<T>> terms;
    for (int i = 0; i < 3; ++i)
        terms.push_back(mul_broadcast(experts[i], slice_channels(w, i, 1)));
    return sum(terms);
}

#define ARFC_INSTANTIATE(T)                                                           \
    template class Msdc<T>;                                                           \
    template class Dcn<T>;                                                            \
    template Tensor<T> difference_kernel<T>(const Tensor<T>&, const Tensor<T>&);      \
    template class Mddc<T>;                                                           \
    template class GatedUnit<T>;                                                      \
    template class Mrffi<T>;

ARFC_INSTANTIATE(float)
ARFC_INSTANTIATE(double)

}  // namespace arfc
