#include "mmpkd/attention_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mmpkd/auroc.hpp"

namespace mmpkd::eval {

using nlohmann::json;

std::optional<double> pixel_auroc(const Image& map, const Mask& mask) {
    if (!map.same_shape(mask)) {
        throw std::invalid_argument("pixel_auroc: map " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                                    " vs mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    for (double v : map.values)
        if (!std::isfinite(v)) throw std::invalid_argument("pixel_auroc: map is not finite");
    std::vector<int> pos(mask.values.begin(), mask.values.end());
    return auroc(map.values, pos);
}

void to_json(json& j, const BoxParams& p) { j = {{"quantile", p.quantile}, {"min_area", p.min_area}}; }

void from_json(const json& j, BoxParams& p) {
    BoxParams d;
    p.quantile = j.value("quantile", d.quantile);
    p.min_area = j.value("min_area", d.min_area);
}

std::vector<Box> extract_boxes(const Image& map, const BoxParams& params) {
    if (!(params.quantile >= 0.0 && params.quantile <= 1.0)) throw std::invalid_argument("box quantile must lie in [0, 1]");
    const std::size_t H = map.height, W = map.width, N = map.size();
    if (N == 0) return {};
    std::vector<double> sorted = map.values;
    std::sort(sorted.begin(), sorted.end());
    const auto k = std::min(N - 1, static_cast<std::size_t>(std::floor(params.quantile * static_cast<double>(N))));
    const double thr = sorted[k];
    const bool strict = thr == sorted.front();
    auto on = [&](std::size_t i) { return strict ? map.values[i] > thr : map.values[i] >= thr; };

    struct Component {
        Box box;
        double peak;
        std::size_t pixels;
    };
    std::vector<Component> comps;
    std::vector<std::uint8_t> seen(N, 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < N; ++start) {
        if (seen[start] || !on(start)) continue;
        Component c{{static_cast<int>(W), static_cast<int>(H), 0, 0}, -INFINITY, 0};
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int y = static_cast<int>(i / W), x = static_cast<int>(i % W);
            c.box.x0 = std::min(c.box.x0, x);
            c.box.y0 = std::min(c.box.y0, y);
            c.box.x1 = std::max(c.box.x1, x + 1);
            c.box.y1 = std::max(c.box.y1, y + 1);
            c.peak = std::max(c.peak, map.values[i]);
            ++c.pixels;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<int>(H) || nx >= static_cast<int>(W)) continue;
                    const std::size_t j = static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx);
                    if (!seen[j] && on(j)) {
                        seen[j] = 1;
                        stack.push_back(j);
                    }
                }
        }
        if (c.pixels >= params.min_area) comps.push_back(c);
    }
    std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) { return a.peak > b.peak; });
    std::vector<Box> out;
    for (const auto& c : comps) out.push_back(c.box);
    return out;
}

double iou(const Box& a, const Box& b) {
    const long long inter = intersection_area(a, b);
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double best_match_iou(const std::vector<Box>& pred, const std::vector<Box>& gt) {
    double best = 0.0;
    for (const auto& p : pred)
        for (const auto& g : gt) best = std::max(best, iou(p, g));
    return best;
}

FprResult false_positive_rate(const std::vector<Box>& pred, const std::vector<Box>& gt) {
    if (pred.empty()) return {0.0, true};
    int x0 = pred[0].x0, y0 = pred[0].y0, x1 = pred[0].x1, y1 = pred[0].y1;
    for (const auto& b : pred) {
        if (!b.valid()) throw std::invalid_argument("false_positive_rate: invalid box " + to_string(b));
        x0 = std::min(x0, b.x0);
        y0 = std::min(y0, b.y0);
        x1 = std::max(x1, b.x1);
        y1 = std::max(y1, b.y1);
    }
    // only the predicted extent matters; GT outside it never intersects
    const auto W = static_cast<std::size_t>(x1 - x0), H = static_cast<std::size_t>(y1 - y0);
    auto shift = [&](std::vector<Box> boxes) {
        std::vector<Box> out;
        for (auto b : boxes) {
            b = {std::max(b.x0, x0) - x0, std::max(b.y0, y0) - y0, std::min(b.x1, x1) - x0, std::min(b.y1, y1) - y0};
            if (b.valid()) out.push_back(b);
        }
        return out;
    };
    const Mask up = rasterize(shift(pred), H, W);
    const Mask ug = rasterize(shift(gt), H, W);
    long long area = 0, outside = 0;
    for (std::size_t i = 0; i < up.size(); ++i) {
        if (!up.values[i]) continue;
        ++area;
        outside += ug.values[i] ? 0 : 1;
    }
    return {static_cast<double>(outside) / static_cast<double>(area), false};
}

RunMetrics evaluate_maps(const std::vector<data::Sample>& samples, const std::vector<Image>& maps,
                         const BoxParams& params, const std::vector<double>* scores) {
    if (maps.size() != samples.size()) throw std::invalid_argument("evaluate_maps: one map per sample required");
    if (scores && scores->size() != samples.size()) throw std::invalid_argument("evaluate_maps: one score per sample required");
    RunMetrics out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto& map = maps[i];
        ImageMetrics m;
        m.id = s.id;
        m.pixel_auroc = pixel_auroc(map, s.roi_mask);
        const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
        m.constant_map = map.size() == 0 || *lo == *hi;
        const auto boxes = extract_boxes(map, params);
        m.n_pred_boxes = boxes.size();
        m.iou = best_match_iou(boxes, s.roi_boxes);
        const auto f = false_positive_rate(boxes, s.roi_boxes);
        m.fpr = f.fpr;
        m.empty_prediction = f.empty_prediction;
        out.images.push_back(std::move(m));
    }
    std::sort(out.images.begin(), out.images.end(), [](const ImageMetrics& a, const ImageMetrics& b) { return a.id < b.id; });

    std::vector<double> au, io, fp;
    for (const auto& m : out.images) {
        if (m.pixel_auroc) {
            au.push_back(*m.pixel_auroc);
        } else {
            ++out.undefined_auroc;
        }
        io.push_back(m.iou);
        fp.push_back(m.fpr);
        out.empty_prediction += m.empty_prediction;
        out.constant_map += m.constant_map;
    }
    if (!au.empty()) out.pixel_auroc = stats::aggregate(au);
    if (!io.empty()) {
        out.iou = stats::aggregate(io);
        out.fpr = stats::aggregate(fp);
    }
    if (scores) out.predictive_auroc = auroc(*scores, data::labels_of(samples));
    return out;
}

RunOutput evaluate_run(const student::StudentViT& model, const std::vector<data::Sample>& samples,
                       student::ExtractionMethod method, const BoxParams& params) {
    const auto& cfg = model.config();
    RunOutput out;
    for (const auto& s : samples) {
        if (s.image.height != cfg.image_height || s.image.width != cfg.image_width) {
            throw std::invalid_argument("evaluate_run: sample " + s.id + " is " + std::to_string(s.image.width) + "x" +
                                        std::to_string(s.image.height) + " but the checkpoint expects " +
                                        std::to_string(cfg.image_width) + "x" + std::to_string(cfg.image_height));
        }
        const auto [logit, rec] = model.infer(s.image);
        out.probabilities.push_back(nn::sigmoid_scalar(logit));
        out.maps.push_back(student::extract_attention_map(rec, method).normalized);
    }
    out.metrics = evaluate_maps(samples, out.maps, params, &out.probabilities);
    return out;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json summary_json(const std::optional<stats::Summary>& s) {
    if (!s) return nullptr;
    return {{"mean", s->mean}, {"std", s->std ? json(*s->std) : json(nullptr)}, {"n", s->n}};
}

}  // namespace

std::string metrics_csv(const RunMetrics& m) {
    std::string out = "id,pixel_auroc,iou,fpr,n_pred_boxes,flags\n";
    for (const auto& r : m.images) {
        std::string flags;
        auto flag = [&](bool on, const char* name) {
            if (!on) return;
            if (!flags.empty()) flags += ';';
            flags += name;
        };
        flag(!r.pixel_auroc, "undefined_auroc");
        flag(r.empty_prediction, "empty_prediction");
        flag(r.constant_map, "constant_map");
        out += r.id + "," + (r.pixel_auroc ? num(*r.pixel_auroc) : "") + "," + num(r.iou) + "," + num(r.fpr) + "," +
               std::to_string(r.n_pred_boxes) + "," + flags + "\n";
    }
    return out;
}

json metrics_summary(const RunMetrics& m) {
    return {{"n_images", m.images.size()},
            {"pixel_auroc", summary_json(m.pixel_auroc)},
            {"iou", summary_json(m.images.empty() ? std::nullopt : std::optional(m.iou))},
            {"fpr", summary_json(m.images.empty() ? std::nullopt : std::optional(m.fpr))},
            {"undefined_auroc", m.undefined_auroc},
            {"empty_prediction", m.empty_prediction},
            {"constant_map", m.constant_map},
            {"predictive_auroc", m.predictive_auroc ? json(*m.predictive_auroc) : json(nullptr)}};
}

Rgb heat_color(double v) {
    // black -> red -> yellow -> white
    v = std::clamp(v, 0.0, 1.0);
    auto ch = [](double x) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
    return {ch(3.0 * v), ch(3.0 * v - 1.0), ch(3.0 * v - 2.0)};
}

std::string render_overlay(const Image& image, const Image& map, const std::vector<Box>& pred,
                           const std::vector<Box>& gt, std::size_t scale) {
    if (!image.same_shape(map)) throw std::invalid_argument("render_overlay: image and map shapes differ");
    if (scale == 0) throw std::invalid_argument("render_overlay: scale must be positive");
    const std::size_t H = image.height * scale, W = image.width * scale;
    std::vector<unsigned char> px(H * W * 3);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t sy = y / scale, sx = x / scale;
            const double g = std::clamp(image(sy, sx), 0.0, 1.0);
            const Rgb h = heat_color(map(sy, sx));
            unsigned char* p = &px[(y * W + x) * 3];
            p[0] = static_cast<unsigned char>(std::lround(0.5 * 255.0 * g + 0.5 * h.r));
            p[1] = static_cast<unsigned char>(std::lround(0.5 * 255.0 * g + 0.5 * h.g));
            p[2] = static_cast<unsigned char>(std::lround(0.5 * 255.0 * g + 0.5 * h.b));
        }
    auto stroke = [&](const Box& b, Rgb c) {
        const long s = static_cast<long>(scale);
        const long x0 = b.x0 * s, y0 = b.y0 * s, x1 = b.x1 * s - 1, y1 = b.y1 * s - 1;
        auto put = [&](long x, long y) {
            if (x < 0 || y < 0 || x >= static_cast<long>(W) || y >= static_cast<long>(H)) return;
            unsigned char* p = &px[(static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * 3];
            p[0] = c.r;
            p[1] = c.g;
            p[2] = c.b;
        };
        for (long x = x0; x <= x1; ++x) {
            put(x, y0);
            put(x, y1);
        }
        for (long y = y0; y <= y1; ++y) {
            put(x0, y);
            put(x1, y);
        }
    };
    for (const auto& b : gt) stroke(b, {255, 0, 0});
    for (const auto& b : pred) stroke(b, {0, 255, 0});
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.append(reinterpret_cast<const char*>(px.data()), px.size());
    return out;
}

void write_overlay(const std::filesystem::path& path, const std::string& ppm) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write overlay " + path.string());
    out.write(ppm.data(), static_cast<std::streamsize>(ppm.size()));
    if (!out) throw std::runtime_error("cannot write overlay " + path.string());
}

}  // namespace mmpkd::eval
