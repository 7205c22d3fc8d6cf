#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpkd/geometry.hpp"
#include "mmpkd/tensor.hpp"

namespace mmpkd::student {

struct VitConfig {
    std::size_t image_height = 32;
    std::size_t image_width = 32;
    std::size_t patch = 4;
    std::size_t dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_hidden = 256;
    double init_std = 0.02;
    double ln_eps = 1e-6;
    bool zero_head = true;

    void validate() const;
    std::size_t grid_h() const { return image_height / patch; }
    std::size_t grid_w() const { return image_width / patch; }
    std::size_t patches() const { return grid_h() * grid_w(); }
    std::size_t tokens() const { return patches() + 1; }
    bool operator==(const VitConfig&) const = default;
};

void to_json(nlohmann::json& j, const VitConfig& c);
void from_json(const nlohmann::json& j, VitConfig& c);

// Softmax attention probabilities of one image: for each layer a
// heads x tokens x tokens block (row-major, query-major). Token 0 is CLS.
struct AttentionRecord {
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t image_height = 0;
    std::size_t image_width = 0;
    std::vector<std::vector<double>> layers;

    double at(std::size_t layer, std::size_t head, std::size_t query, std::size_t key) const {
        return layers[layer][(head * tokens + query) * tokens + key];
    }
};

struct ForwardResult {
    nn::Tensor logits;  // shape (B,)
    std::vector<AttentionRecord> attention;  // one per image when recorded
};

// Pre-norm vision transformer with a CLS token and a single-logit head.
//
// patchify -> linear embed -> [CLS] ++ patches -> + positional
//   -> depth x (LN -> MHSA -> residual -> LN -> MLP(GELU) -> residual)
//   -> LN -> head(CLS)
class StudentViT {
public:
    StudentViT(VitConfig cfg, std::uint64_t seed);

    const VitConfig& config() const { return cfg_; }
    const std::vector<nn::Tensor>& parameters() const { return params_; }
    nn::Tensor& parameter(const std::string& name);
    std::size_t parameter_count() const;

    ForwardResult forward(std::span<const Image* const> images, bool record_attention = false) const;
    ForwardResult forward(const std::vector<Image>& images, bool record_attention = false) const;
    // Same graph with caller-supplied tensors in parameters() order (used by gradient checks).
    ForwardResult forward(std::span<const nn::Tensor> params, std::span<const Image* const> images,
                          bool record_attention = false) const;

    // Single-image convenience: (logit, attention).
    std::pair<double, AttentionRecord> infer(const Image& image) const;

    // Raw parameter bytes in declaration order; equal iff weights are bitwise equal.
    std::string weight_bytes() const;

    void save(const std::filesystem::path& path) const;
    static StudentViT load(const std::filesystem::path& path);

private:
    StudentViT() = default;
    nn::Tensor add_param(const std::string& name, nn::Shape shape);
    void build_parameters();
    nn::Tensor patchify(std::span<const Image* const> images) const;

    VitConfig cfg_;
    std::vector<nn::Tensor> params_;
    std::vector<std::string> names_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ExtractionMethod { LastCls, Rollout };
std::string method_name(ExtractionMethod m);
ExtractionMethod parse_method(const std::string& s);

struct AttentionMap {
    Grid<double> grid;  // (H/P) x (W/P) raw CLS attention over patches
    Image normalized;   // H x W, min-max normalized to [0,1]
    bool constant = false;
};

// Last layer CLS row averaged over heads, or attention rollout
// (row-normalized 0.5 * A_mean + 0.5 * I, multiplied through the layers).
AttentionMap extract_attention_map(const AttentionRecord& attn, ExtractionMethod method = ExtractionMethod::LastCls);

struct UpsampledMap {
    Image map;
    bool constant = false;
};

// Bilinear (corner-aligned) upsampling to H x W followed by min-max
// normalization. A constant input yields 0.5 everywhere, flagged.
UpsampledMap upsample_map(const Grid<double>& grid, std::size_t height, std::size_t width);

}  // namespace mmpkd::student
