#include "arfc/wavelet.hpp"

#include <array>
#include <atomic>
#include <cmath>

namespace arfc {

namespace {

// Sign of block position (a, b, c, d) in each band, rows ll, lh, hl, hh.
// The matrix is symmetric and H * H = 4 I, so synthesis reuses it / 4.
constexpr std::array<std::array<int, 4>, 4> kHaar{{
    {1, 1, 1, 1},
    {1, -1, 1, -1},
    {1, 1, -1, -1},
    {1, -1, -1, 1},
}};

std::atomic<bool> g_synthesis_fault{false};

template <typename T>
Tensor<T> haar_band(const Tensor<T>& x, int band)
{
    const Shape s = x.shape();
    const int ho = s.h / 2;
    const int wo = s.w / 2;
    Tensor<T> out(Shape{s.n, s.c, ho, wo});
    const auto& sg = kHaar[band];
    const T* in = x.ptr();
    T* o = out.ptr_mut();
    const int planes = s.n * s.c;
    for (int p = 0; p < planes; ++p) {
        const T* src = in + static_cast<std::size_t>(p) * s.plane();
        T* dst = o + static_cast<std::size_t>(p) * ho * wo;
        for (int i = 0; i < ho; ++i) {
            const T* r0 = src + static_cast<std::size_t>(2 * i) * s.w;
            const T* r1 = r0 + s.w;
            for (int j = 0; j < wo; ++j)
                dst[i * wo + j] = sg[0] * r0[2 * j] + sg[1] * r0[2 * j + 1] + sg[2] * r1[2 * j] + sg[3] * r1[2 * j + 1];
        }
    }
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "haar_band", {x}, [x, band, s, ho, wo, planes](const detail::TensorImpl<T>& res) {
            auto dx = detail::grad_of(x);
            const auto& sg = kHaar[band];
            for (int p = 0; p < planes; ++p) {
                T* dst = dx.data() + static_cast<std::size_t>(p) * s.plane();
                const T* g = res.grad.data() + static_cast<std::size_t>(p) * ho * wo;
                for (int i = 0; i < ho; ++i) {
                    T* r0 = dst + static_cast<std::size_t>(2 * i) * s.w;
                    T* r1 = r0 + s.w;
                    for (int j = 0; j < wo; ++j) {
                        const T v = g[i * wo + j];
                        r0[2 * j] += sg[0] * v;
                        r0[2 * j + 1] += sg[1] * v;
                        r1[2 * j] += sg[2] * v;
                        r1[2 * j + 1] += sg[3] * v;
                    }
                }
            }
        });
    return out;
}

template <typename T>
void require_consistent(const WaveletSubbands<T>& s, const char* op)
{
    const Shape& ref = s.ll.shape();
    for (const Tensor<T>* b : {&s.lh, &s.hl, &s.hh})
        if (b->shape() != ref)
            throw DimensionError(std::string(op) + ": subband shapes differ (" + ref.str() + " vs " +
                                 b->shape().str() + ")");
}

}  // namespace

void set_synthesis_fault(bool enabled) { g_synthesis_fault = enabled; }

template <typename T>
Tensor<T> WaveletSubbands<T>::f1() const
{
    return concat_channels<T>({ll, lh, hl, hh});
}

template <typename T>
WaveletSubbands<T> haar_analyze(const Tensor<T>& x)
{
    const Shape s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0 || s.h == 0 || s.w == 0)
        throw DimensionError("haar_analyze: spatial extents must be even and nonzero, got " + s.str());
    WaveletSubbands<T> out;
    out.ll = haar_band(x, 0);
    out.lh = haar_band(x, 1);
    out.hl = haar_band(x, 2);
    out.hh = haar_band(x, 3);
    out.source_h = s.h;
    out.source_w = s.w;
    return out;
}

template <typename T>
Tensor<T> haar_synthesize(const WaveletSubbands<T>& sb)
{
    require_consistent(sb, "haar_synthesize");
    const Shape s = sb.ll.shape();
    Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
    std::array<std::array<T, 4>, 4> coef{};
    const bool fault = g_synthesis_fault;
    for (int band = 0; band < 4; ++band)
        for (int q = 0; q < 4; ++q)
            coef[band][q] = T(kHaar[band][q]) / T(4) * (fault && band == 1 ? T(-1) : T(1));

    const std::array<const T*, 4> src{sb.ll.ptr(), sb.lh.ptr(), sb.hl.ptr(), sb.hh.ptr()};
    const int planes = s.n * s.c;
    const int wo = 2 * s.w;
    T* o = out.ptr_mut();
    for (int p = 0; p < planes; ++p)
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                const std::size_t k = (static_cast<std::size_t>(p) * s.h + i) * s.w + j;
                T* r0 = o + (static_cast<std::size_t>(p) * 2 * s.h + 2 * i) * wo + 2 * j;
                T* r1 = r0 + wo;
                T* cell[4] = {r0, r0 + 1, r1, r1 + 1};
                for (int q = 0; q < 4; ++q)
                    *cell[q] = coef[0][q] * src[0][k] + coef[1][q] * src[1][k] + coef[2][q] * src[2][k] +
                               coef[3][q] * src[3][k];
            }

    const Tensor<T> ll = sb.ll, lh = sb.lh, hl = sb.hl, hh = sb.hh;
    if (detail::needs_grad<T>({&ll, &lh, &hl, &hh}))
        detail::record<T>(out, "haar_synthesize", {ll, lh, hl, hh},
                          [ll, lh, hl, hh, coef, s, planes, wo](const detail::TensorImpl<T>& res) {
                              const std::array<const Tensor<T>*, 4> bands{&ll, &lh, &hl, &hh};
                              for (int band = 0; band < 4; ++band) {
                                  if (!bands[band]->requires_grad())
                                      continue;
                                  auto d = detail::grad_of(*bands[band]);
                                  for (int p = 0; p < planes; ++p)
                                      for (int i = 0; i < s.h; ++i)
                                          for (int j = 0; j < s.w; ++j) {
                                              const std::size_t k = (static_cast<std::size_t>(p) * s.h + i) * s.w + j;
                                              const T* r0 =
                                                  res.grad.data() + (static_cast<std::size_t>(p) * 2 * s.h + 2 * i) * wo + 2 * j;
                                              const T* r1 = r0 + wo;
                                              d[k] += coef[band][0] * r0[0] + coef[band][1] * r0[1] +
                                                      coef[band][2] * r1[0] + coef[band][3] * r1[1];
                                          }
                              }
                          });
    return out;
}

template <typename T>
Tensor<T> haar_fuse_downsampled(const WaveletSubbands<T>& sb)
{
    require_consistent(sb, "haar_fuse_downsampled");
    return scale(sum<T>({sb.ll, sb.lh, sb.hl, sb.hh}), T(0.25));
}

FrequencyMask build_mask(MaskKind kind, int h, int w)
{
    if (h < 1 || w < 1)
        throw ConfigError("build_mask: extents must be positive");
    if (kind == MaskKind::custom)
        throw ConfigError("build_mask: only high_pass and low_pass are generated");
    FrequencyMask m;
    m.h = h;
    m.w = w;
    m.kind = kind;
    m.cutoff = std::max(std::max(h, w) / 20, 1);
    m.center_u = h / 2;
    m.center_v = w / 2;
    m.values.resize(static_cast<std::size_t>(h) * w);
    const double d0 = m.cutoff;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const double du = u - m.center_u;
            const double dv = v - m.center_v;
            const double d2 = du * du + dv * dv;
            double g;
            if (kind == MaskKind::high_pass)
                g = d2 < d0 * d0 ? 0.0 : 1.0 - std::exp(-d0 * d0 / d2);
            else
                g = d2 <= d0 * d0 ? std::exp(-d2 / (d0 * d0)) : 1.0;
            m.values[static_cast<std::size_t>(u) * w + v] = g;
        }
    return m;
}

template <typename T>
SqueezeExcite<T>::SqueezeExcite(int channels, Rng& rng)
    : mlp_(channels, nn::reduced_width(channels), channels, rng)
{
    this->add_child("mlp", mlp_);
}

template <typename T>
Tensor<T> SqueezeExcite<T>::gate(const Tensor<T>& x) const
{
    return sigmoid(mlp_.forward(global_pool(x, GlobalPoolKind::avg)));
}

template <typename T>
Tensor<T> SqueezeExcite<T>::forward(const Tensor<T>& x) const
{
    return mul_broadcast(x, gate(x));
}

template <typename T>
PixelAttention<T>::PixelAttention(int channels, Rng& rng) : conv_(ConvSpec::pointwise(channels, channels), rng)
{
    this->add_child("conv", conv_);
}

template <typename T>
Tensor<T> PixelAttention<T>::forward(const Tensor<T>& x) const
{
    return mul(x, sigmoid(conv_.forward(x)));
}

namespace {

int checked_half_of_three(int channels)
{
    if (channels < 2 || channels % 2 != 0)
        throw ConfigError("WFED: channel count must be even and >= 2, got " + std::to_string(channels));
    return 3 * channels / 2;
}

}  // namespace

template <typename T>
WfedBlock<T>::WfedBlock(int channels, Rng& rng, WfedOptions options)
    : channels_(channels),
      options_(options),
      entry_(ConvSpec::same(channels, channels, 3, 3), rng),
      se_high_(3 * channels, rng),
      se_low_(channels, rng),
      pa_high_(3 * channels, rng),
      mix_se_(ConvSpec::pointwise(3 * channels, checked_half_of_three(channels)), rng),
      mix_pa_(ConvSpec::pointwise(3 * channels, checked_half_of_three(channels)), rng)
{
    this->add_child("entry", entry_);
    this->add_child("se_high", se_high_);
    this->add_child("se_low", se_low_);
    this->add_child("pa_high", pa_high_);
    this->add_child("mix_se", mix_se_);
    this->add_child("mix_pa", mix_pa_);
}

template <typename T>
const FrequencyMask& WfedBlock<T>::mask(MaskKind kind, int h, int w)
{
    const auto key = std::make_tuple(static_cast<int>(kind), h, w);
    auto it = masks_.find(key);
    if (it == masks_.end())
        it = masks_.emplace(key, build_mask(kind, h, w)).first;
    return it->second;
}

template <typename T>
Tensor<T> WfedBlock<T>::forward(const Tensor<T>& x)
{
    if (x.shape().c != channels_)
        throw DimensionError("WFED: expected " + std::to_string(channels_) + " channels, got " + x.shape().str());
    const WaveletSubbands<T> sb = haar_analyze(entry_.forward(x));
    const int hh = sb.ll.shape().h;
    const int ww = sb.ll.shape().w;

    Tensor<T> high = concat_channels<T>({sb.lh, sb.hl, sb.hh});
    Tensor<T> low = sb.ll;
    if (options_.frequency_filter) {
        high = dft2_filter(high, mask(MaskKind::high_pass, hh, ww));
        low = dft2_filter(low, mask(MaskKind::low_pass, hh, ww));
    }
    const Tensor<T> fh = concat_channels<T>({mix_se_.forward(se_high_.forward(high)),
                                             mix_pa_.forward(pa_high_.forward(high))});
    Tensor<T> fl = se_low_.forward(low);
    if (options_.low_sigmoid)
        fl = sigmoid(fl);

    WaveletSubbands<T> enhanced;
    enhanced.ll = fl;
    enhanced.lh = slice_channels(fh, 0, channels_);
    enhanced.hl = slice_channels(fh, channels_, channels_);
    enhanced.hh = slice_channels(fh, 2 * channels_, channels_);
    enhanced.source_h = sb.source_h;
    enhanced.source_w = sb.source_w;
    return add(haar_fuse_downsampled(enhanced), pool2d(x, PoolKind::max));
}

#define ARFC_INSTANTIATE(T)                                                 \
    template struct WaveletSubbands<T>;                                     \
    template WaveletSubbands<T> haar_analyze<T>(const Tensor<T>&);          \
    template Tensor<T> haar_synthesize<T>(const WaveletSubbands<T>&);       \
    template Tensor<T> haar_fuse_downsampled<T>(const WaveletSubbands<T>&); \
    template class SqueezeExcite<T>;                                        \
    template class PixelAttention<T>;                                      \
    template class WfedBlock<T>;

ARFC_INSTANTIATE(float)
ARFC_INSTANTIATE(double)

}  // namespace arfc
