#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpkd/geometry.hpp"
#include "mmpkd/stats.hpp"
#include "mmpkd/synth_data.hpp"
#include "mmpkd/vit.hpp"

namespace mmpkd::eval {

// Positives are mask pixels. nullopt when the mask is all 0 or all 1.
std::optional<double> pixel_auroc(const Image& map, const Mask& mask);

struct BoxParams {
    double quantile = 0.9;      // pixels at or above this quantile are foreground
    std::size_t min_area = 16;  // components with fewer pixels are dropped (one patch)
};

void to_json(nlohmann::json& j, const BoxParams& p);
void from_json(const nlohmann::json& j, BoxParams& p);

// Quantile threshold, 8-connected components, tight boxes, sorted by
// descending component peak. When the threshold equals the map minimum only
// pixels strictly above the minimum count, so a constant map gives no boxes.
std::vector<Box> extract_boxes(const Image& map, const BoxParams& params = {});

double iou(const Box& a, const Box& b);
// Max IoU over all (pred, gt) pairs; 0 when pred is empty.
double best_match_iou(const std::vector<Box>& pred, const std::vector<Box>& gt);

struct FprResult {
    double fpr = 0.0;
    bool empty_prediction = false;
};
// |U_pred \ U_gt| / |U_pred| over pixel unions.
FprResult false_positive_rate(const std::vector<Box>& pred, const std::vector<Box>& gt);

struct ImageMetrics {
    std::string id;
    std::optional<double> pixel_auroc;
    double iou = 0.0;
    double fpr = 0.0;
    std::size_t n_pred_boxes = 0;
    bool empty_prediction = false;
    bool constant_map = false;
};

struct RunMetrics {
    std::vector<ImageMetrics> images;  // sorted by id
    std::optional<stats::Summary> pixel_auroc;
    stats::Summary iou;
    stats::Summary fpr;
    std::size_t undefined_auroc = 0;
    std::size_t empty_prediction = 0;
    std::size_t constant_map = 0;
    std::optional<double> predictive_auroc;
};

// maps[i] is the normalized H x W map for samples[i]; scores (optional) are
// predicted probabilities used for the predictive AUROC.
RunMetrics evaluate_maps(const std::vector<data::Sample>& samples, const std::vector<Image>& maps,
                         const BoxParams& params, const std::vector<double>* scores = nullptr);

struct RunOutput {
    RunMetrics metrics;
    std::vector<Image> maps;           // aligned with the input samples
    std::vector<double> probabilities;  // aligned with the input samples
};

RunOutput evaluate_run(const student::StudentViT& model, const std::vector<data::Sample>& samples,
                       student::ExtractionMethod method, const BoxParams& params);

// id,pixel_auroc,iou,fpr,n_pred_boxes,flags
std::string metrics_csv(const RunMetrics& m);
nlohmann::json metrics_summary(const RunMetrics& m);

// Grayscale image blended 50/50 with the heat colormap of `map`, GT boxes
// stroked red, predictions green, each pixel repeated scale x scale. Binary PPM.
std::string render_overlay(const Image& image, const Image& map, const std::vector<Box>& pred,
                           const std::vector<Box>& gt, std::size_t scale = 1);
void write_overlay(const std::filesystem::path& path, const std::string& ppm);

struct Rgb {
    unsigned char r, g, b;
};
Rgb heat_color(double v);

}  // namespace mmpkd::eval
