#include "arfc/net.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "arfc/serialize.hpp"

namespace arfc {

namespace fs = std::filesystem;

namespace {

template <typename V>
V parse_number(const std::string& key, const std::string& text)
{
    V value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text)
{
    if (text == "true" || text == "1" || text == "on" || text == "yes")
        return true;
    if (text == "false" || text == "0" || text == "off" || text == "no")
        return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text)
{
    std::vector<int> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        const auto a = item.find_first_not_of(' ');
        const auto b = item.find_last_not_of(' ');
        if (a == std::string::npos)
            continue;
        out.push_back(parse_number<int>(key, item.substr(a, b - a + 1)));
    }
    return out;
}

std::string join(const auto& values)
{
    std::string s;
    for (const auto& v : values)
        s += (s.empty() ? "" : ",") + std::to_string(v);
    return s;
}

std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

bool apply_net_key(NetConfig& c, const std::string& k, const std::string& v)
{
    if (k == "stage_channels") {
        const auto list = parse_int_list(k, v);
        if (list.size() != 5)
            throw ConfigError("config key 'stage_channels': expected 5 values, got " + std::to_string(list.size()));
        std::copy(list.begin(), list.end(), c.stage_channels.begin());
    } else if (k == "input_channels") {
        c.input_channels = parse_number<int>(k, v);
    } else if (k == "use_mrffi") {
        c.use_mrffi = parse_bool(k, v);
    } else if (k == "use_wfed") {
        c.use_wfed = parse_bool(k, v);
    } else if (k == "use_hlff") {
        c.use_hlff = parse_bool(k, v);
    } else if (k == "use_gmea") {
        c.use_gmea = parse_bool(k, v);
    } else if (k == "gate_hidden") {
        c.gate_hidden = parse_number<int>(k, v);
    } else if (k == "wfed_frequency_filter") {
        c.wfed_frequency_filter = parse_bool(k, v);
    } else if (k == "wfed_low_sigmoid") {
        c.wfed_low_sigmoid = parse_bool(k, v);
    } else if (k == "gmea_stem") {
        c.gmea_stem = parse_bool(k, v);
    } else if (k == "net_seed") {
        c.seed = parse_number<std::uint64_t>(k, v);
    } else {
        return false;
    }
    return true;
}

bool apply_train_key(TrainConfig& c, const std::string& k, const std::string& v)
{
    if (k == "epochs")
        c.epochs = parse_number<int>(k, v);
    else if (k == "batch_size")
        c.batch_size = parse_number<int>(k, v);
    else if (k == "learning_rate")
        c.learning_rate = parse_number<double>(k, v);
    else if (k == "lr_milestones")
        c.lr_milestones = parse_int_list(k, v);
    else if (k == "lr_decay")
        c.lr_decay = parse_number<double>(k, v);
    else if (k == "adam_beta1")
        c.adam.beta1 = parse_number<double>(k, v);
    else if (k == "adam_beta2")
        c.adam.beta2 = parse_number<double>(k, v);
    else if (k == "adam_eps")
        c.adam.eps = parse_number<double>(k, v);
    else if (k == "delta")
        c.delta = parse_number<double>(k, v);
    else if (k == "train_seed")
        c.seed = parse_number<std::uint64_t>(k, v);
    else
        return false;
    return true;
}

}  // namespace

void NetConfig::validate() const
{
    if (input_channels < 1)
        throw ConfigError("network: input_channels must be positive");
    if (gate_hidden < 1)
        throw ConfigError("network: gate_hidden must be positive");
    for (int i = 0; i < 5; ++i) {
        const int c = stage_channels[i];
        if (c < 4 || c % 4 != 0)
            throw ConfigError("network stage " + std::to_string(i) + ": channel count " + std::to_string(c) +
                              " must be a positive multiple of 4");
        if (i > 0 && c <= stage_channels[i - 1])
            throw ConfigError("network stage " + std::to_string(i) + ": channels must increase (" +
                              std::to_string(stage_channels[i - 1]) + " -> " + std::to_string(c) + ")");
    }
}

NetConfig NetConfig::baseline() const
{
    NetConfig b = *this;
    b.use_mrffi = b.use_wfed = b.use_hlff = b.use_gmea = false;
    return b;
}

std::map<std::string, std::string> NetConfig::to_key_values() const
{
    return {{"stage_channels", join(stage_channels)},
            {"input_channels", std::to_string(input_channels)},
            {"use_mrffi", bool_text(use_mrffi)},
            {"use_wfed", bool_text(use_wfed)},
            {"use_hlff", bool_text(use_hlff)},
            {"use_gmea", bool_text(use_gmea)},
            {"gate_hidden", std::to_string(gate_hidden)},
            {"wfed_frequency_filter", bool_text(wfed_frequency_filter)},
            {"wfed_low_sigmoid", bool_text(wfed_low_sigmoid)},
            {"gmea_stem", bool_text(gmea_stem)},
            {"net_seed", std::to_string(seed)}};
}

NetConfig NetConfig::from_key_values(const std::map<std::string, std::string>& kv)
{
    NetConfig c;
    for (const auto& [k, v] : kv)
        if (!apply_net_key(c, k, v))
            throw ConfigError("unknown network config key '" + k + "'");
    c.validate();
    return c;
}

void TrainConfig::validate() const
{
    if (epochs < 1 || batch_size < 1)
        throw ConfigError("training: epochs and batch_size must be positive");
    if (!(learning_rate > 0) || !(lr_decay > 0) || !(delta > 0))
        throw ConfigError("training: learning_rate, lr_decay and delta must be positive");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.eps > 0))
        throw ConfigError("training: Adam betas must lie in [0, 1) and eps must be positive");
    if (!std::is_sorted(lr_milestones.begin(), lr_milestones.end()))
        throw ConfigError("training: lr_milestones must be ascending");
    const MultiStepLR schedule(learning_rate, lr_milestones, lr_decay);
    for (int e = 0; e < epochs; ++e)
        if (!(schedule.at(e) > 0))
            throw ConfigError("training: learning rate decays to zero at epoch " + std::to_string(e));
}

std::map<std::string, std::string> TrainConfig::to_key_values() const
{
    return {{"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"learning_rate", format_double(learning_rate)},
            {"lr_milestones", join(lr_milestones)},
            {"lr_decay", format_double(lr_decay)},
            {"adam_beta1", format_double(adam.beta1)},
            {"adam_beta2", format_double(adam.beta2)},
            {"adam_eps", format_double(adam.eps)},
            {"delta", format_double(delta)},
            {"train_seed", std::to_string(seed)}};
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv)
{
    TrainConfig c;
    for (const auto& [k, v] : kv)
        if (!apply_train_key(c, k, v))
            throw ConfigError("unknown training config key '" + k + "'");
    c.validate();
    return c;
}

RunConfig RunConfig::from_key_values(const std::map<std::string, std::string>& kv)
{
    RunConfig r;
    for (const auto& [k, v] : kv)
        if (!apply_net_key(r.net, k, v) && !apply_train_key(r.train, k, v))
            throw ConfigError("unknown config key '" + k + "'");
    r.net.validate();
    r.train.validate();
    return r;
}

template <typename T>
DoubleConv<T>::DoubleConv(int in_channels, int out_channels, Rng& rng)
    : a_(ConvSpec::same(in_channels, out_channels, 3, 3), rng), b_(ConvSpec::same(out_channels, out_channels, 3, 3), rng)
{
    this->add_child("conv1", a_);
    this->add_child("conv2", b_);
}

template <typename T>
Tensor<T> DoubleConv<T>::forward(const Tensor<T>& x)
{
    return b_.forward(a_.forward(x));
}

template <typename T>
FeatureBlock<T>::FeatureBlock(int in_channels, int out_channels, bool mrffi, int gate_hidden, Rng& rng)
{
    if (mrffi) {
        mrffi_ = std::make_unique<Mrffi<T>>(in_channels, out_channels, rng, MrffiOptions{gate_hidden});
        this->add_child("mrffi", *mrffi_);
    } else {
        plain_ = std::make_unique<DoubleConv<T>>(in_channels, out_channels, rng);
        this->add_child("plain", *plain_);
    }
}

template <typename T>
Tensor<T> FeatureBlock<T>::forward(const Tensor<T>& x)
{
    return mrffi_ ? mrffi_->forward(x) : plain_->forward(x);
}

template <typename T>
ArfcNet<T>::ArfcNet(const NetConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
    Rng rng(cfg_.seed);
    const auto& ch = cfg_.stage_channels;
    auto stage_error = [](const char* part, int i, const std::exception& e) {
        return ConfigError(std::string(part) + " stage " + std::to_string(i) + ": " + e.what());
    };

    for (int i = 0; i < 5; ++i) {
        try {
            enc_[i] = std::make_unique<FeatureBlock<T>>(i == 0 ? cfg_.input_channels : ch[i - 1], ch[i],
                                                        cfg_.use_mrffi, cfg_.gate_hidden, rng);
            this->add_child("enc" + std::to_string(i), *enc_[i]);
            if (i < 4 && cfg_.use_wfed) {
                wfed_[i] = std::make_unique<WfedBlock<T>>(
                    ch[i], rng, WfedOptions{cfg_.wfed_frequency_filter, cfg_.wfed_low_sigmoid});
                this->add_child("down" + std::to_string(i), *wfed_[i]);
            }
        } catch (const std::invalid_argument& e) {
            throw stage_error("encoder", i, e);
        }
    }
    for (int i = 3; i >= 0; --i) {
        try {
            if (cfg_.use_hlff) {
                hlff_[i] = std::make_unique<HlffBlock<T>>(ch[i], ch[i + 1], rng);
                this->add_child("fuse" + std::to_string(i), *hlff_[i]);
            }
            const int in = cfg_.use_hlff ? ch[i] : ch[i] + ch[i + 1];
            dec_[i] = std::make_unique<FeatureBlock<T>>(in, ch[i], cfg_.use_mrffi, cfg_.gate_hidden, rng);
            this->add_child("dec" + std::to_string(i), *dec_[i]);
            if (cfg_.use_gmea) {
                gmea_[i] = std::make_unique<GmeaBlock<T>>(ch[i], rng, GmeaOptions{cfg_.gmea_stem});
                this->add_child("attn" + std::to_string(i), *gmea_[i]);
            }
        } catch (const std::invalid_argument& e) {
            throw stage_error("decoder", i, e);
        }
    }
    head_ = std::make_unique<nn::Conv2d<T>>(ConvSpec::pointwise(ch[0], 1), rng);
    this->add_child("head", *head_);
}

template <typename T>
Tensor<T> ArfcNet<T>::forward(const Tensor<T>& x)
{
    const Shape s = x.shape();
    if (s.c != cfg_.input_channels)
        throw DimensionError("network: expected " + std::to_string(cfg_.input_channels) + " input channels, got " +
                             s.str());
    if (s.h % 16 != 0 || s.w % 16 != 0 || s.h == 0 || s.w == 0)
        throw DimensionError("network: input extents must be positive multiples of 16, got " + s.str() +
                             " (pad and crop, see infer_padded)");
    std::array<Tensor<T>, 4> skips;
    Tensor<T> d = x;
    for (int i = 0; i < 4; ++i) {
        skips[i] = enc_[i]->forward(d);
        d = wfed_[i] ? wfed_[i]->forward(skips[i]) : pool2d(skips[i], PoolKind::max);
    }
    d = enc_[4]->forward(d);
    for (int i = 3; i >= 0; --i) {
        const Tensor<T> fused =
            hlff_[i] ? hlff_[i]->forward(skips[i], d) : concat_channels<T>({bilinear_upsample2x(d), skips[i]});
        d = dec_[i]->forward(fused);
        if (gmea_[i])
            d = gmea_[i]->forward(d);
    }
    return head_->forward(d);
}

template <typename T>
Tensor<T> ArfcNet<T>::saliency(const Tensor<T>& x)
{
    return sigmoid(forward(x));
}

template <typename T>
Tensor<T> soft_iou_loss(const Tensor<T>& logits, const Tensor<T>& mask, double delta)
{
    if (logits.shape() != mask.shape())
        throw DimensionError("soft_iou_loss: logits " + logits.shape().str() + " and mask " + mask.shape().str() +
                             " differ");
    if (!(delta > 0))
        throw ConfigError("soft_iou_loss: delta must be positive");
    const Shape s = logits.shape();
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    std::vector<T> prob(logits.numel());
    std::vector<double> inter(s.n), uni(s.n);
    double loss = 0;
    for (int n = 0; n < s.n; ++n) {
        double a = 0, u = 0;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const double p = logits.data()[i];
            const double sg = p >= 0 ? 1.0 / (1.0 + std::exp(-p)) : std::exp(p) / (1.0 + std::exp(p));
            prob[i] = static_cast<T>(sg);
            const double y = mask.data()[i];
            a += sg * y;
            u += sg + y - sg * y;
        }
        inter[n] = a;
        uni[n] = u;
        loss += 1.0 - (a + delta) / (u + delta);
    }
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(loss / s.n));
    detail::check_finite<T>(out.data(), "soft_iou_loss");
    if (detail::needs_grad<T>({&logits}))
        detail::record<T>(out, "soft_iou_loss", {logits},
                          [logits, mask, prob = std::move(prob), inter, uni, delta, per,
                           n_samples = s.n](const detail::TensorImpl<T>& res) {
                              auto dp = detail::grad_of(logits);
                              const double g = static_cast<double>(res.grad[0]) / n_samples;
                              for (int n = 0; n < n_samples; ++n) {
                                  const double a = inter[n] + delta;
                                  const double u = uni[n] + delta;
                                  for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
                                      const double y = mask.data()[i];
                                      const double sg = prob[i];
                                      // d(1 - a/u)/ds = -(y u - a (1 - y)) / u^2
                                      const double ds = -(y * u - a * (1 - y)) / (u * u);
                                      dp[i] += static_cast<T>(g * ds * sg * (1 - sg));
                                  }
                              }
                          });
    return out;
}

template <typename T>
Adam<T>::Adam(std::vector<nn::NamedTensor<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor->numel(), 0.0);
        v_.emplace_back(p.tensor->numel(), 0.0);
    }
}

template <typename T>
void Adam<T>::step(double lr)
{
    ++t_;
    const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor<T>& p = *params_[k].tensor;
        auto data = p.data_mut();
        const bool has = p.has_grad();
        const auto grad = p.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has ? static_cast<double>(grad[i]) : 0.0;
            m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
            const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            data[i] = static_cast<T>(data[i] - update);
        }
        detail::check_finite<T>(p.data(), params_[k].name.c_str());
    }
}

MultiStepLR::MultiStepLR(double base, std::vector<int> milestones, double factor)
    : base_(base), milestones_(std::move(milestones)), factor_(factor)
{
}

double MultiStepLR::at(int epoch) const
{
    double lr = base_;
    for (int m : milestones_)
        if (epoch >= m)
            lr *= factor_;
    return lr;
}

std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<Sample>& data, const std::vector<int>& order,
                                                   std::size_t first, std::size_t count)
{
    const Shape one = data[order[first]].image.shape();
    Tensor<float> x(Shape{static_cast<int>(count), one.c, one.h, one.w});
    Tensor<float> y(Shape{static_cast<int>(count), 1, one.h, one.w});
    const std::size_t xs = static_cast<std::size_t>(one.c) * one.plane();
    for (std::size_t b = 0; b < count; ++b) {
        const Sample& s = data[order[first + b]];
        if (s.image.shape() != one || s.mask.shape() != Shape{1, 1, one.h, one.w})
            throw DimensionError("batch: sample " + s.id + " has shape " + s.image.shape().str() + ", expected " +
                                 one.str());
        std::copy(s.image.data().begin(), s.image.data().end(), x.data_mut().begin() + b * xs);
        std::copy(s.mask.data().begin(), s.mask.data().end(), y.data_mut().begin() + b * one.plane());
    }
    return {x, y};
}

std::vector<EpochRecord> train(ArfcNet<float>& net, const std::vector<Sample>& data, const TrainConfig& cfg,
                               const EpochCallback& on_epoch)
{
    cfg.validate();
    if (data.empty())
        throw ConfigError("training: dataset is empty");
    Rng rng(cfg.seed);
    const MultiStepLR schedule(cfg.learning_rate, cfg.lr_milestones, cfg.lr_decay);
    Adam<float> opt(net.parameters(), cfg.adam);
    std::vector<EpochRecord> log;
    net.set_training(true);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = schedule.at(epoch);
        std::vector<int> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        int batch = 0;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++batch) {
            const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - first);
            const auto [x, y] = make_batch(data, order, first, count);
            try {
                net.zero_grad();
                const Tensor<float> loss = soft_iou_loss(net.forward(x), y, cfg.delta);
                const double value = loss.data()[0];
                loss.backward();
                opt.step(rec.lr);
                rec.batch_losses.push_back(value);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " +
                                   e.what());
            }
        }
        double total = 0;
        for (double l : rec.batch_losses)
            total += l;
        rec.mean_loss = total / rec.batch_losses.size();
        log.push_back(rec);
        if (on_epoch && !on_epoch(log.back()))
            break;
    }
    return log;
}

Inference infer(ArfcNet<float>& net, const Tensor<float>& image, double threshold)
{
    const bool was_training = net.training();
    net.set_training(false);
    Inference out;
    {
        NoGradGuard guard;
        out.saliency = net.saliency(image);
    }
    net.set_training(was_training);
    out.mask = Tensor<float>(out.saliency.shape());
    for (std::size_t i = 0; i < out.mask.numel(); ++i)
        out.mask.data_mut()[i] = out.saliency.data()[i] > threshold ? 1.0f : 0.0f;
    return out;
}

namespace {

int reflect_index(int i, int n)
{
    if (n == 1)
        return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - i;
}

}  // namespace

Inference infer_padded(ArfcNet<float>& net, const Tensor<float>& image, double threshold)
{
    const Shape s = image.shape();
    const int hp = (s.h + 15) / 16 * 16;
    const int wp = (s.w + 15) / 16 * 16;
    if (hp == s.h && wp == s.w)
        return infer(net, image, threshold);
    Tensor<float> padded(Shape{s.n, s.c, hp, wp});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < hp; ++i)
                for (int j = 0; j < wp; ++j)
                    padded.at(n, c, i, j) = image(n, c, reflect_index(i, s.h), reflect_index(j, s.w));
    const Inference full = infer(net, padded, threshold);
    Inference out{Tensor<float>(Shape{s.n, 1, s.h, s.w}), Tensor<float>(Shape{s.n, 1, s.h, s.w})};
    for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                out.saliency.at(n, 0, i, j) = full.saliency(n, 0, i, j);
                out.mask.at(n, 0, i, j) = full.mask(n, 0, i, j);
            }
    return out;
}

namespace {

void write_key_values(const fs::path& path, const std::map<std::string, std::string>& kv)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& [k, v] : kv)
        os << k << " = " << v << "\n";
}

std::vector<nn::NamedTensor<float>> state_of(ArfcNet<float>& net)
{
    auto all = net.parameters();
    for (auto& b : net.buffers())
        all.push_back(b);
    return all;
}

}  // namespace

void save_checkpoint(ArfcNet<float>& net, const fs::path& dir)
{
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest)
        throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
    manifest << "# name shape dtype file\n";
    for (const auto& [name, t] : state_of(net)) {
        const Shape s = t->shape();
        const std::string file = name + ".raw";
        write_tensor(dir / file, *t);
        manifest << name << " " << s.n << "," << s.c << "," << s.h << "," << s.w << " f32 " << file << "\n";
    }
    write_key_values(dir / "net.cfg", net.config().to_key_values());
}

NetConfig read_checkpoint_config(const fs::path& dir)
{
    return NetConfig::from_key_values(read_key_values(dir / "net.cfg"));
}

void load_checkpoint(ArfcNet<float>& net, const fs::path& dir)
{
    std::ifstream is(dir / "manifest.txt");
    if (!is)
        throw ParseError("checkpoint: cannot open " + (dir / "manifest.txt").string());
    std::map<std::string, std::pair<Shape, std::string>> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ls(line);
        std::string name, shape, dtype, file;
        if (!(ls >> name >> shape >> dtype >> file))
            throw ParseError("checkpoint manifest line " + std::to_string(lineno) + ": expected 'name shape dtype file'");
        const auto dims = parse_int_list("shape", shape);
        if (dims.size() != 4)
            throw ParseError("checkpoint manifest line " + std::to_string(lineno) + ": bad shape '" + shape + "'");
        entries[name] = {Shape{dims[0], dims[1], dims[2], dims[3]}, file};
    }
    auto state = state_of(net);
    if (entries.size() != state.size())
        throw ParseError("checkpoint: manifest lists " + std::to_string(entries.size()) + " tensors, network has " +
                         std::to_string(state.size()));
    for (auto& [name, t] : state) {
        const auto it = entries.find(name);
        if (it == entries.end())
            throw ParseError("checkpoint: missing tensor '" + name + "'");
        if (it->second.first != t->shape())
            throw DimensionError("checkpoint: tensor '" + name + "' has shape " + it->second.first.str() +
                                 ", network expects " + t->shape().str());
        const Tensor<float> loaded = read_tensor<float>(dir / it->second.second);
        if (loaded.shape() != t->shape())
            throw ParseError("checkpoint: file for '" + name + "' holds shape " + loaded.shape().str());
        std::copy(loaded.data().begin(), loaded.data().end(), t->data_mut().begin());
    }
}

template class DoubleConv<float>;
template class DoubleConv<double>;
template class FeatureBlock<float>;
template class FeatureBlock<double>;
template class ArfcNet<float>;
template class ArfcNet<double>;
template Tensor<float> soft_iou_loss<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> soft_iou_loss<double>(const Tensor<double>&, const Tensor<double>&, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace arfc
