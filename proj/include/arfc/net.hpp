#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "arfc/data.hpp"
#include "arfc/gmea.hpp"
#include "arfc/hlff.hpp"
#include "arfc/mrffi.hpp"
#include "arfc/nn.hpp"
#include "arfc/wavelet.hpp"

namespace arfc {

struct NetConfig {
    std::array<int, 5> stage_channels{8, 16, 32, 64, 128};
    int input_channels = 1;
    bool use_mrffi = true;
    bool use_wfed = true;
    bool use_hlff = true;
    bool use_gmea = true;
    int gate_hidden = 16;
    bool wfed_frequency_filter = true;
    bool wfed_low_sigmoid = true;
    bool gmea_stem = true;
    std::uint64_t seed = 42;

    /// Throws ConfigError naming the offending stage.
    void validate() const;
    /// Every switch off: plain double-conv U-Net with max pooling.
    NetConfig baseline() const;

    std::map<std::string, std::string> to_key_values() const;
    /// Unknown keys are a ConfigError.
    static NetConfig from_key_values(const std::map<std::string, std::string>& kv);
};

/// conv-BN-ReLU twice; the stand-in block when MRFFIConv is switched off.
template <typename T>
class DoubleConv : public nn::Module<T> {
public:
    DoubleConv(int in_channels, int out_channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);

private:
    nn::ConvBnRelu<T> a_;
    nn::ConvBnRelu<T> b_;
};

/// Either an MRFFIConv or a DoubleConv, fixed at construction.
template <typename T>
class FeatureBlock : public nn::Module<T> {
public:
    FeatureBlock(int in_channels, int out_channels, bool mrffi, int gate_hidden, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Mrffi<T>* mrffi() { return mrffi_.get(); }

private:
    std::unique_ptr<Mrffi<T>> mrffi_;
    std::unique_ptr<DoubleConv<T>> plain_;
};

/// Five-stage encoder-decoder.
///
/// Encoder stage i < 4: block_i (MRFFIConv or double conv) -> skip_i, then
/// WFED (or 2x2 max pooling). Stage 4 is the bottleneck block.
/// Decoder stage i = 3..0: HLFF(skip_i, d) (or concat(up(d), skip_i)),
/// block, GMEA (optional). Head: 1x1 conv to one logit channel.
template <typename T>
class ArfcNet : public nn::Module<T> {
public:
    explicit ArfcNet(const NetConfig& cfg);

    /// Logits, (N, 1, H, W). H and W must be divisible by 16.
    Tensor<T> forward(const Tensor<T>& x);
    /// sigmoid(forward(x)).
    Tensor<T> saliency(const Tensor<T>& x);

    const NetConfig& config() const { return cfg_; }

    FeatureBlock<T>& encoder_block(int i) { return *enc_[i]; }
    FeatureBlock<T>& decoder_block(int i) { return *dec_[i]; }
    WfedBlock<T>* wfed(int i) { return wfed_[i].get(); }
    HlffBlock<T>* hlff(int i) { return hlff_[i].get(); }
    GmeaBlock<T>* gmea(int i) { return gmea_[i].get(); }

private:
    NetConfig cfg_;
    std::array<std::unique_ptr<FeatureBlock<T>>, 5> enc_;
    std::array<std::unique_ptr<WfedBlock<T>>, 4> wfed_;
    std::array<std::unique_ptr<HlffBlock<T>>, 4> hlff_;
    std::array<std::unique_ptr<FeatureBlock<T>>, 4> dec_;
    std::array<std::unique_ptr<GmeaBlock<T>>, 4> gmea_;
    std::unique_ptr<nn::Conv2d<T>> head_;
};

/// Mean over samples of 1 - (sum s*y + delta) / (sum (s + y - s*y) + delta),
/// s = sigmoid(logits). Returns a (1, 1, 1, 1) tensor.
template <typename T>
Tensor<T> soft_iou_loss(const Tensor<T>& logits, const Tensor<T>& mask, double delta = 1.0);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    Adam(std::vector<nn::NamedTensor<T>> params, AdamConfig cfg = {});
    /// Applies one update with learning rate lr, using each parameter's grad.
    void step(double lr);
    long steps() const { return t_; }

private:
    std::vector<nn::NamedTensor<T>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamConfig cfg_;
    long t_ = 0;
};

/// lr(epoch) = base * factor^(number of milestones <= epoch).
class MultiStepLR {
public:
    MultiStepLR(double base, std::vector<int> milestones, double factor);
    double at(int epoch) const;

private:
    double base_;
    std::vector<int> milestones_;
    double factor_;
};

struct TrainConfig {
    int epochs = 400;
    int batch_size = 8;
    double learning_rate = 5e-4;
    std::vector<int> lr_milestones{200, 300};
    double lr_decay = 0.1;
    AdamConfig adam;
    double delta = 1.0;
    std::uint64_t seed = 42;

    void validate() const;
    std::map<std::string, std::string> to_key_values() const;
    static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);
};

/// Network and training keys read from one config file. Network seed is
/// "net_seed", shuffle seed is "train_seed".
struct RunConfig {
    NetConfig net;
    TrainConfig train;
    static RunConfig from_key_values(const std::map<std::string, std::string>& kv);
};

struct EpochRecord {
    int epoch = 0;  ///< zero-based
    double lr = 0;
    double mean_loss = 0;
    std::vector<double> batch_losses;
};

/// Returning false from the callback stops training after that epoch.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Mini-batch Adam on the SoftIoU loss. Shuffling draws from an Rng seeded
/// with cfg.seed. A non-finite loss throws NumericError naming the epoch and
/// batch.
std::vector<EpochRecord> train(ArfcNet<float>& net, const std::vector<Sample>& data, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {});

/// Stacks samples [first, first + count) of `order` into a batch.
std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<Sample>& data, const std::vector<int>& order,
                                                   std::size_t first, std::size_t count);

struct Inference {
    Tensor<float> saliency;  ///< (1, 1, H, W) in [0, 1]
    Tensor<float> mask;      ///< saliency > threshold
};

/// Evaluation-mode forward of one (1, C, H, W) image. H and W must be
/// divisible by 16; otherwise DimensionError (see infer_padded).
Inference infer(ArfcNet<float>& net, const Tensor<float>& image, double threshold = 0.5);
/// Reflect-pads to the next multiple of 16, infers, crops back.
Inference infer_padded(ArfcNet<float>& net, const Tensor<float>& image, double threshold = 0.5);

/// One raw tensor file per parameter and buffer, a manifest
/// ("name n,c,h,w dtype file" per line) and net.cfg with the NetConfig.
void save_checkpoint(ArfcNet<float>& net, const std::filesystem::path& dir);
/// Loads values into an already-built network; names and shapes must match.
void load_checkpoint(ArfcNet<float>& net, const std::filesystem::path& dir);
NetConfig read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace arfc
