#include "arfc/gmea.hpp"

namespace arfc {

std::vector<int> shuffle_permutation(int channels, int groups)
{
    if (groups < 1 || channels < 1 || channels % groups != 0)
        throw ConfigError("channel shuffle: " + std::to_string(channels) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    const int per = channels / groups;
    std::vector<int> perm(channels);
    for (int j = 0; j < per; ++j)
        for (int k = 0; k < groups; ++k)
            perm[j * groups + k] = k * per + j;
    return perm;
}

template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, int groups)
{
    const std::vector<int> perm = shuffle_permutation(x.shape().c, groups);
    return permute_channels(x, std::span<const int>(perm));
}

namespace {

int checked_channels(int channels)
{
    if (channels < GmeaBlock<float>::kShuffleGroups || channels % GmeaBlock<float>::kShuffleGroups != 0)
        throw ConfigError("GMEA: channels must be a positive multiple of 4, got " + std::to_string(channels));
    return channels;
}

ConvSpec strip(int channels, int i)
{
    const auto& k = GmeaBlock<float>::kStrips[i];
    return ConvSpec::depthwise(channels, k[0], k[1]);
}

}  // namespace

template <typename T>
GmeaBlock<T>::GmeaBlock(int channels, Rng& rng, GmeaOptions options)
    : channels_(checked_channels(channels)),
      options_(options),
      mlp_(channels, nn::reduced_width(channels), channels, rng),
      stem_(ConvSpec::depthwise(channels, 5, 5), rng),
      d1_(strip(channels, 0), rng),
      d2_(strip(channels, 1), rng),
      d3_(strip(channels, 2), rng),
      d4_(strip(channels, 3), rng),
      d5_(strip(channels, 4), rng),
      d6_(strip(channels, 5), rng),
      branches_{&d1_, &d2_, &d3_, &d4_, &d5_, &d6_},
      out_(ConvSpec::pointwise(channels, channels), rng)
{
    this->add_child("mlp", mlp_);
    this->add_child("stem", stem_);
    for (int i = 0; i < 6; ++i)
        this->add_child("d" + std::to_string(i + 1), *branches_[i]);
    this->add_child("out", out_);
}

template <typename T>
Tensor<T> GmeaBlock<T>::attention_map(const Tensor<T>& f) const
{
    std::vector<Tensor<T>> terms;
    for (GlobalPoolKind kind : {GlobalPoolKind::avg, GlobalPoolKind::max, GlobalPoolKind::median})
        terms.push_back(sigmoid(mlp_.forward(global_pool(f, kind))));
    return sum(terms);
}

template <typename T>
Tensor<T> GmeaBlock<T>::channel_attention(const Tensor<T>& f) const
{
    return mul_broadcast(f, attention_map(f));
}

template <typename T>
Tensor<T> GmeaBlock<T>::spatial_attention(const Tensor<T>& fs) const
{
    const Tensor<T> base = options_.stem ? stem_.forward(fs) : fs;
    std::vector<Tensor<T>> terms;
    for (const nn::Conv2d<T>* d : branches_)
        terms.push_back(d->forward(base));
    return mul(out_.forward(sum(terms)), fs);
}

template <typename T>
Tensor<T> GmeaBlock<T>::forward(const Tensor<T>& f) const
{
    if (f.shape().c != channels_)
        throw DimensionError("GMEA: expected " + std::to_string(channels_) + " channels, got " + f.shape().str());
    return spatial_attention(channel_shuffle(channel_attention(f), kShuffleGroups));
}

template Tensor<float> channel_shuffle<float>(const Tensor<float>&, int);
template Tensor<double> channel_shuffle<double>(const Tensor<double>&, int);
template class GmeaBlock<float>;
template class GmeaBlock<double>;

}  // namespace arfc
