#include "arfc/hlff.hpp"

namespace arfc {

namespace {

int checked_low(int low_channels)
{
    if (low_channels < 4 || low_channels % 4 != 0)
        throw ConfigError("HLFF: low-level channels must be a positive multiple of 4, got " +
                          std::to_string(low_channels));
    return low_channels;
}

}  // namespace

template <typename T>
HlffBlock<T>::HlffBlock(int low_channels, int high_channels, Rng& rng)
    : low_(checked_low(low_channels)),
      high_(high_channels),
      dw_(ConvSpec::depthwise(high_channels, 3, 3), rng),
      pw_(ConvSpec::pointwise(high_channels, low_channels), rng),
      g1_(ConvSpec::same(low_channels / 2, low_channels / 4, 3, 3, kDilations[0]), rng),
      g2_(ConvSpec::same(low_channels / 2, low_channels / 4, 3, 3, kDilations[1]), rng),
      g3_(ConvSpec::same(low_channels / 2, low_channels / 4, 3, 3, kDilations[2]), rng),
      g4_(ConvSpec::same(low_channels / 2, low_channels / 4, 3, 3, kDilations[3]), rng),
      groups_{&g1_, &g2_, &g3_, &g4_},
      ln_group_(low_channels / 2),
      ln_out_(low_channels),
      out_(ConvSpec::pointwise(low_channels, low_channels), rng)
{
    this->add_child("align_dw", dw_);
    this->add_child("align_pw", pw_);
    this->add_child("g1", g1_);
    this->add_child("g2", g2_);
    this->add_child("g3", g3_);
    this->add_child("g4", g4_);
    this->add_child("ln_group", ln_group_);
    this->add_child("ln_out", ln_out_);
    this->add_child("out", out_);
}

template <typename T>
Tensor<T> HlffBlock<T>::align(const Tensor<T>& high) const
{
    if (high.shape().c != high_)
        throw DimensionError("HLFF: expected " + std::to_string(high_) + " high-level channels, got " +
                             high.shape().str());
    return bilinear_upsample2x(pw_.forward(dw_.forward(high)));
}

template <typename T>
Tensor<T> HlffBlock<T>::forward(const Tensor<T>& low, const Tensor<T>& high) const
{
    const Tensor<T> aligned = align(high);
    if (low.shape().c != low_ || aligned.shape() != low.shape())
        throw DimensionError("HLFF: aligned high-level map " + aligned.shape().str() + " does not match low-level " +
                             low.shape().str());
    const int q = low_ / 4;
    std::vector<Tensor<T>> lanes;
    for (int i = 0; i < 4; ++i) {
        const Tensor<T> pair = concat_channels<T>({slice_channels(aligned, i * q, q), slice_channels(low, i * q, q)});
        lanes.push_back(groups_[i]->forward(ln_group_.forward(pair)));
    }
    return out_.forward(ln_out_.forward(concat_channels(lanes)));
}

template class HlffBlock<float>;
template class HlffBlock<double>;

}  // namespace arfc
