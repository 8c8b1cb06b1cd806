#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "arfc/tensor.hpp"

namespace arfc {

/// One image/mask pair, both (1, 1, H, W). Image in [0, 1], mask in {0, 1}.
struct Sample {
    std::string id;
    Tensor<float> image;
    Tensor<float> mask;
};

struct PgmImage {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint16_t> pixels;  ///< raw samples, row-major
};

/// Binary "P5" PGM, maxval 255 (8-bit) or 65535 (16-bit big-endian). Comment
/// lines in the header are skipped. Throws ParseError with the byte offset.
PgmImage read_pgm(const std::filesystem::path& path);
PgmImage parse_pgm(const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const PgmImage& image);

/// Normalized intensities v / maxval as a (1, 1, H, W) tensor.
Tensor<float> load_pgm(const std::filesystem::path& path);
/// Any value > 0 maps to 1.
Tensor<float> load_mask_pgm(const std::filesystem::path& path);
/// Quantizes round(clamp(v, 0, 1) * maxval). maxval is 255 or 65535.
void save_pgm(const std::filesystem::path& path, const Tensor<float>& image, int maxval = 255);

enum class Background { flat, gradient, cloud };

struct SynthConfig {
    int count = 10;
    int image_size = 64;
    int targets_min = 1;
    int targets_max = 3;
    double sigma_min = 0.8;
    double sigma_max = 2.0;
    double contrast_min = 0.35;
    double contrast_max = 0.8;
    Background background = Background::cloud;
    double background_level = 0.25;
    double background_amplitude = 0.2;
    double noise_sigma = 0.02;
    int test_count = 0;  ///< last test_count samples go to the "test" split
    std::uint64_t seed = 1;

    void validate() const;
};

struct Blob {
    double row = 0;
    double col = 0;
    double sigma = 1;
    double peak = 1;
};

/// Grid points where peak * exp(-r^2 / (2 sigma^2)) exceeds 10% of the peak,
/// i.e. r^2 < 2 sigma^2 ln 10.
bool inside_blob_support(const Blob& blob, int row, int col);

struct SyntheticImage {
    Tensor<float> image;
    Tensor<float> mask;
    std::vector<Blob> blobs;
    bool hard = false;  ///< some contrast did not exceed the noise level
    int skipped_targets = 0;
};

/// One image, deterministic in (cfg, index).
SyntheticImage synthesize_image(const SynthConfig& cfg, int index);

/// Writes images/<id>.pgm, masks/<id>.pgm and manifest.txt under out_dir.
/// Warnings (skipped placements) go to `warn`.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                        const std::function<void(const std::string&)>& warn = {});

struct ManifestEntry {
    std::string id;
    std::string image;
    std::string mask;
    std::string split;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dataset_dir);

/// Loads the dataset listed in the manifest, optionally only one split.
std::vector<Sample> load_dataset(const std::filesystem::path& dataset_dir,
                                 const std::optional<std::string>& split = std::nullopt);

/// Plain-text key = value file; '#' starts a comment. Duplicate keys and
/// malformed lines raise ParseError with the line number.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

}  // namespace arfc
