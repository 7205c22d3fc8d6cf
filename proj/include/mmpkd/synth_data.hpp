#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpkd/geometry.hpp"
#include "mmpkd/rng.hpp"

namespace mmpkd::data {

enum class Split { Train, Val, Test };
inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};
std::string split_name(Split s);
Split parse_split(const std::string& s);

// One multimodal record: image x, privileged vector x*, label y, ROI truth.
struct Sample {
    std::string id;
    std::uint64_t index = 0;  // global across splits
    Image image;
    std::vector<double> privileged;
    int label = 0;
    Mask roi_mask;
    std::vector<Box> roi_boxes;

    bool operator==(const Sample&) const = default;
};

struct GeneratorConfig {
    std::uint64_t seed = 0;
    std::size_t n_train = 256;
    std::size_t n_val = 128;
    std::size_t n_test = 128;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t privileged_dim = 8;
    int roi_min = 6;
    int roi_max = 12;
    double signal = 0.6;
    int distractor_min = 0;
    int distractor_max = 2;
    double privileged_noise = 0.1;
    double background_mean = 0.25;
    double background_std = 0.08;
    double roi_mean = 0.55;
    int placement_attempts = 200;

    // Throws std::invalid_argument with the offending field.
    void validate() const;
    std::size_t count(Split s) const;
    bool operator==(const GeneratorConfig&) const = default;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

struct Dataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t privileged_dim = 0;
    std::optional<GeneratorConfig> generator;  // absent for externally sourced data
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;

    std::vector<Sample>& split(Split s);
    const std::vector<Sample>& split(Split s) const;
    bool operator==(const Dataset&) const = default;
};

// Raised when a generated ROI layout cannot be placed.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised on unreadable, inconsistent or tampered dataset directories.
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Deterministic synthetic stand-in for an image + privileged-modality corpus.
//
// Background pixels are clipped Gaussian noise. Each image carries one ROI
// rectangle whose texture encodes the class: a checkerboard whose contrast is
// proportional to `signal` for y = 1, a flat fill for y = 0 (identical for
// both classes when signal = 0). Flat distractor rectangles of random
// intensity are placed off the ROI. The privileged vector is
//   [cx/W, cy/H, w/W, h/H, y] + N(0, privileged_noise)  ++  (d - 5) N(0, 1).
// Pixel values are rounded to float32 so the on-disk codec is lossless.
Dataset generate_dataset(const GeneratorConfig& cfg);

// Single-sample generation, exposed for tests.
Sample generate_sample(const GeneratorConfig& cfg, Rng& rng, int label, std::uint64_t index, const std::string& id);

// On-disk layout (see docs/formats.md):
//   manifest.json, <split>_privileged.csv, images/<id>.f32, masks/<id>.u8
inline constexpr int kDatasetSchemaVersion = 1;

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Plug-in point for other corpora (the synthetic generator and on-disk reader
// are the two built-in sources).
class DatasetSource {
public:
    virtual ~DatasetSource() = default;
    virtual Dataset load() = 0;
};

class SyntheticSource final : public DatasetSource {
public:
    explicit SyntheticSource(GeneratorConfig cfg) : cfg_(std::move(cfg)) {}
    Dataset load() override { return generate_dataset(cfg_); }

private:
    GeneratorConfig cfg_;
};

class DirectorySource final : public DatasetSource {
public:
    explicit DirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {}
    Dataset load() override { return read_dataset(dir_); }

private:
    std::filesystem::path dir_;
};

// Utility views used across training and evaluation.
std::vector<std::vector<double>> privileged_matrix(const std::vector<Sample>& samples);
std::vector<int> labels_of(const std::vector<Sample>& samples);

}  // namespace mmpkd::data
