#include "arfc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "arfc/random.hpp"
#include "arfc/spectral.hpp"

namespace arfc {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ParseError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::string& bytes)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os)
        throw std::runtime_error("write failed for " + path.string());
}

class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : b_(bytes) {}

    void skip_space_and_comments()
    {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n')
                    ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    int number(const char* what)
    {
        skip_space_and_comments();
        const std::size_t start = pos_;
        long value = 0;
        while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
            value = value * 10 + (b_[pos_] - '0');
            if (value > 1'000'000)
                throw ParseError(std::string("pgm: ") + what + " too large at byte " + std::to_string(start));
            ++pos_;
        }
        if (pos_ == start)
            throw ParseError(std::string("pgm: expected ") + what + " at byte " + std::to_string(start));
        return static_cast<int>(value);
    }

    std::size_t pos_ = 0;

private:
    const std::string& b_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index)
{
    // splitmix64 finalizer over a combined key
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

PgmImage parse_pgm(const std::string& bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw ParseError("pgm: expected magic P5 at byte 0");
    HeaderReader r(bytes);
    r.pos_ = 2;
    PgmImage img;
    img.width = r.number("width");
    img.height = r.number("height");
    const std::size_t maxval_at = r.pos_;
    img.maxval = r.number("maxval");
    if (img.maxval != 255 && img.maxval != 65535)
        throw ParseError("pgm: unsupported maxval " + std::to_string(img.maxval) + " near byte " +
                         std::to_string(maxval_at));
    if (img.width < 1 || img.height < 1)
        throw ParseError("pgm: empty image declared before byte " + std::to_string(r.pos_));
    if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_])))
        throw ParseError("pgm: missing whitespace after maxval at byte " + std::to_string(r.pos_));
    const std::size_t start = r.pos_ + 1;
    const int bps = img.maxval > 255 ? 2 : 1;
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
    if (bytes.size() < start + count * bps)
        throw ParseError("pgm: payload truncated at byte " + std::to_string(bytes.size()) + " (expected " +
                         std::to_string(start + count * bps) + ")");
    img.pixels.resize(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + start;
    for (std::size_t i = 0; i < count; ++i)
        img.pixels[i] = bps == 1 ? p[i] : static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
    return img;
}

PgmImage read_pgm(const fs::path& path)
{
    try {
        return parse_pgm(slurp(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_pgm(const fs::path& path, const PgmImage& image)
{
    if (image.maxval != 255 && image.maxval != 65535)
        throw ConfigError("pgm: maxval must be 255 or 65535");
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                      std::to_string(image.maxval) + "\n";
    for (std::uint16_t v : image.pixels) {
        if (image.maxval > 255)
            out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xff));
    }
    spit(path, out);
}

Tensor<float> load_pgm(const fs::path& path)
{
    const PgmImage img = read_pgm(path);
    Tensor<float> t(Shape{1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t.data_mut()[i] = static_cast<float>(static_cast<double>(img.pixels[i]) / img.maxval);
    return t;
}

Tensor<float> load_mask_pgm(const fs::path& path)
{
    const PgmImage img = read_pgm(path);
    Tensor<float> t(Shape{1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t.data_mut()[i] = img.pixels[i] > 0 ? 1.0f : 0.0f;
    return t;
}

void save_pgm(const fs::path& path, const Tensor<float>& image, int maxval)
{
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 1)
        throw DimensionError("save_pgm: expected a single-channel image, got " + s.str());
    PgmImage img;
    img.width = s.w;
    img.height = s.h;
    img.maxval = maxval;
    img.pixels.resize(image.numel());
    for (std::size_t i = 0; i < image.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(image.data()[i]), 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * maxval));
    }
    write_pgm(path, img);
}

void SynthConfig::validate() const
{
    if (count < 0 || image_size < 4)
        throw ConfigError("synthetic data: count must be >= 0 and image size >= 4");
    if (targets_min < 0 || targets_max < targets_min)
        throw ConfigError("synthetic data: invalid targets-per-image range");
    if (sigma_min < 0.5 || sigma_max < sigma_min)
        throw ConfigError("synthetic data: target sigma must be >= 0.5 px with min <= max");
    if (contrast_min <= 0 || contrast_max < contrast_min)
        throw ConfigError("synthetic data: invalid contrast range");
    if (noise_sigma < 0 || background_amplitude < 0)
        throw ConfigError("synthetic data: noise and background amplitude must be nonnegative");
    if (test_count < 0 || test_count > count)
        throw ConfigError("synthetic data: test count exceeds count");
}

bool inside_blob_support(const Blob& blob, int row, int col)
{
    const double dr = row - blob.row;
    const double dc = col - blob.col;
    return dr * dr + dc * dc < 2 * blob.sigma * blob.sigma * std::log(10.0);
}

SyntheticImage synthesize_image(const SynthConfig& cfg, int index)
{
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    const int n = cfg.image_size;
    std::vector<double> img(static_cast<std::size_t>(n) * n, cfg.background_level);

    switch (cfg.background) {
    case Background::flat:
        break;
    case Background::gradient: {
        const double angle = rng.uniform(0, 2 * std::numbers::pi);
        const double cy = std::cos(angle), cx = std::sin(angle);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                img[i * n + j] += cfg.background_amplitude * ((cy * i + cx * j) / n);
        break;
    }
    case Background::cloud: {
        Tensor<double> noise(Shape{1, 1, n, n});
        for (double& v : noise.data_mut())
            v = rng.normal();
        FrequencyMask m = FrequencyMask::constant(n, n, 0.0);
        const double sf = n / 12.0;
        for (int u = 0; u < n; ++u)
            for (int v = 0; v < n; ++v) {
                const double du = u - n / 2, dv = v - n / 2;
                m.values[static_cast<std::size_t>(u) * n + v] = std::exp(-(du * du + dv * dv) / (2 * sf * sf));
            }
        const Tensor<double> smooth = dft2_filter(noise, m);
        double peak = 1e-12;
        for (double v : smooth.data())
            peak = std::max(peak, std::abs(v));
        for (std::size_t i = 0; i < img.size(); ++i)
            img[i] += cfg.background_amplitude * smooth.data()[i] / peak;
        break;
    }
    }

    SyntheticImage out;
    const int wanted = rng.integer(cfg.targets_min, cfg.targets_max);
    for (int t = 0; t < wanted; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            Blob b;
            b.sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max);
            b.peak = rng.uniform(cfg.contrast_min, cfg.contrast_max);
            const double radius = b.sigma * std::sqrt(2 * std::log(10.0));
            const double margin = radius + 1;
            if (n - 1 - 2 * margin <= 0)
                continue;
            b.row = rng.uniform(margin, n - 1 - margin);
            b.col = rng.uniform(margin, n - 1 - margin);
            bool clear = true;
            for (const Blob& o : out.blobs) {
                const double r2 = o.sigma * std::sqrt(2 * std::log(10.0));
                const double d = std::hypot(o.row - b.row, o.col - b.col);
                if (d < radius + r2 + 2)
                    clear = false;
            }
            if (clear) {
                out.blobs.push_back(b);
                placed = true;
            }
        }
        if (!placed)
            ++out.skipped_targets;
    }

    out.mask = Tensor<float>(Shape{1, 1, n, n});
    for (const Blob& b : out.blobs) {
        if (b.peak <= cfg.noise_sigma)
            out.hard = true;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double dr = i - b.row, dc = j - b.col;
                img[i * n + j] += b.peak * std::exp(-(dr * dr + dc * dc) / (2 * b.sigma * b.sigma));
                if (inside_blob_support(b, i, j))
                    out.mask.at(0, 0, i, j) = 1.0f;
            }
    }
    out.image = Tensor<float>(Shape{1, 1, n, n});
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double noisy = img[i] + (cfg.noise_sigma > 0 ? cfg.noise_sigma * rng.normal() : 0.0);
        out.image.data_mut()[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    return out;
}

void generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir,
                        const std::function<void(const std::string&)>& warn)
{
    cfg.validate();
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
    std::ostringstream manifest;
    manifest << "# id image mask split\n";
    const int digits = std::max<int>(4, static_cast<int>(std::to_string(cfg.count).size()));
    for (int i = 0; i < cfg.count; ++i) {
        std::string id = std::to_string(i);
        id.insert(0, digits - id.size(), '0');
        const SyntheticImage s = synthesize_image(cfg, i);
        if (s.skipped_targets > 0 && warn)
            warn("image " + id + ": skipped " + std::to_string(s.skipped_targets) +
                 " target(s) after 100 placement attempts");
        save_pgm(out_dir / "images" / (id + ".pgm"), s.image);
        save_pgm(out_dir / "masks" / (id + ".pgm"), s.mask);
        const char* split = i >= cfg.count - cfg.test_count ? "test" : "train";
        manifest << id << " images/" << id << ".pgm masks/" << id << ".pgm " << split << "\n";
    }
    spit(out_dir / "manifest.txt", manifest.str());
}

std::vector<ManifestEntry> read_manifest(const fs::path& dataset_dir)
{
    std::istringstream is(slurp(dataset_dir / "manifest.txt"));
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty())
            continue;
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.id >> e.image >> e.mask))
            throw ParseError("manifest line " + std::to_string(lineno) + ": expected 'id image mask [split]'");
        if (!(ls >> e.split))
            e.split = "train";
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<Sample> load_dataset(const fs::path& dataset_dir, const std::optional<std::string>& split)
{
    std::vector<Sample> out;
    for (const ManifestEntry& e : read_manifest(dataset_dir)) {
        if (split && e.split != *split)
            continue;
        Sample s{e.id, load_pgm(dataset_dir / e.image), load_mask_pgm(dataset_dir / e.mask)};
        if (s.image.shape() != s.mask.shape())
            throw ParseError("sample " + e.id + ": image " + s.image.shape().str() + " and mask " +
                             s.mask.shape().str() + " differ");
        out.push_back(std::move(s));
    }
    return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text)
{
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ParseError("config line " + std::to_string(lineno) + ": empty key");
        if (!out.emplace(key, value).second)
            throw ParseError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return out;
}

std::map<std::string, std::string> read_key_values(const fs::path& path)
{
    return parse_key_values(slurp(path));
}

}  // namespace arfc
