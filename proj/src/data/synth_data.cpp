#include "mmpkd/synth_data.hpp"

#include <algorithm>
#include <cmath>

namespace mmpkd::data {

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

void GeneratorConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("generator config: " + what); };
    if (height < 16 || width < 16) fail("height and width must be >= 16");
    if (privileged_dim < 5) fail("privileged_dim must be >= 5");
    if (roi_min < 2 || roi_min > roi_max) fail("roi size range must satisfy 2 <= roi_min <= roi_max");
    if (static_cast<std::size_t>(roi_max) > std::min(height, width) / 2) fail("roi_max must be <= min(H, W) / 2");
    if (!(signal >= 0.0 && signal <= 1.0)) fail("signal must lie in [0, 1]");
    if (distractor_min < 0 || distractor_min > distractor_max) fail("distractor count range invalid");
    if (!(privileged_noise >= 0.0)) fail("privileged_noise must be >= 0");
    if (!(background_std >= 0.0)) fail("background_std must be >= 0");
    if (placement_attempts < 1) fail("placement_attempts must be >= 1");
}

std::size_t GeneratorConfig::count(Split s) const {
    switch (s) {
        case Split::Train: return n_train;
        case Split::Val: return n_val;
        case Split::Test: return n_test;
    }
    return 0;
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"seed", c.seed},
         {"n_train", c.n_train},
         {"n_val", c.n_val},
         {"n_test", c.n_test},
         {"height", c.height},
         {"width", c.width},
         {"privileged_dim", c.privileged_dim},
         {"roi_min", c.roi_min},
         {"roi_max", c.roi_max},
         {"signal", c.signal},
         {"distractor_min", c.distractor_min},
         {"distractor_max", c.distractor_max},
         {"privileged_noise", c.privileged_noise},
         {"background_mean", c.background_mean},
         {"background_std", c.background_std},
         {"roi_mean", c.roi_mean},
         {"placement_attempts", c.placement_attempts}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    GeneratorConfig d;
    c.seed = j.value("seed", d.seed);
    c.n_train = j.value("n_train", d.n_train);
    c.n_val = j.value("n_val", d.n_val);
    c.n_test = j.value("n_test", d.n_test);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.privileged_dim = j.value("privileged_dim", d.privileged_dim);
    c.roi_min = j.value("roi_min", d.roi_min);
    c.roi_max = j.value("roi_max", d.roi_max);
    c.signal = j.value("signal", d.signal);
    c.distractor_min = j.value("distractor_min", d.distractor_min);
    c.distractor_max = j.value("distractor_max", d.distractor_max);
    c.privileged_noise = j.value("privileged_noise", d.privileged_noise);
    c.background_mean = j.value("background_mean", d.background_mean);
    c.background_std = j.value("background_std", d.background_std);
    c.roi_mean = j.value("roi_mean", d.roi_mean);
    c.placement_attempts = j.value("placement_attempts", d.placement_attempts);
}

std::vector<Sample>& Dataset::split(Split s) {
    switch (s) {
        case Split::Train: return train;
        case Split::Val: return val;
        case Split::Test: return test;
    }
    return train;
}

const std::vector<Sample>& Dataset::split(Split s) const { return const_cast<Dataset*>(this)->split(s); }

namespace {

double to_pixel(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

Box random_box(Rng& rng, const GeneratorConfig& cfg, int min_side, int max_side) {
    const int w = static_cast<int>(rng.integer(min_side, max_side));
    const int h = static_cast<int>(rng.integer(min_side, max_side));
    const int x0 = static_cast<int>(rng.integer(0, static_cast<std::int64_t>(cfg.width) - w));
    const int y0 = static_cast<int>(rng.integer(0, static_cast<std::int64_t>(cfg.height) - h));
    return {x0, y0, x0 + w, y0 + h};
}

}  // namespace

Sample generate_sample(const GeneratorConfig& cfg, Rng& rng, int label, std::uint64_t index, const std::string& id) {
    const std::size_t H = cfg.height, W = cfg.width;
    Sample s;
    s.id = id;
    s.index = index;
    s.label = label;
    s.image = Image(H, W);
    for (auto& v : s.image.values) v = rng.normal(cfg.background_mean, cfg.background_std);

    const Box roi = random_box(rng, cfg, cfg.roi_min, cfg.roi_max);
    s.roi_boxes = {roi};

    const int n_distract = static_cast<int>(rng.integer(cfg.distractor_min, cfg.distractor_max));
    const int d_min = std::max(2, cfg.roi_min / 2);
    const int d_max = std::max(d_min, cfg.roi_max / 2);
    for (int k = 0; k < n_distract; ++k) {
        Box d{};
        bool placed = false;
        for (int attempt = 0; attempt < cfg.placement_attempts; ++attempt) {
            d = random_box(rng, cfg, d_min, d_max);
            if (!overlaps(d, roi)) {
                placed = true;
                break;
            }
        }
        if (!placed) {
            throw GenerationError("cannot place distractor " + std::to_string(k) + " off ROI " + to_string(roi) +
                                  " after " + std::to_string(cfg.placement_attempts) + " attempts (image " +
                                  std::to_string(W) + "x" + std::to_string(H) + ", roi size [" +
                                  std::to_string(cfg.roi_min) + ", " + std::to_string(cfg.roi_max) + "])");
        }
        const double level = rng.uniform(0.35, 0.85);
        for (int y = d.y0; y < d.y1; ++y)
            for (int x = d.x0; x < d.x1; ++x) s.image(y, x) = level + rng.normal(0.0, cfg.background_std);
    }

    // ROI texture: the class-1 checkerboard collapses to the class-0 fill at signal 0.
    const double amplitude = 0.4 * cfg.signal;
    for (int y = roi.y0; y < roi.y1; ++y) {
        for (int x = roi.x0; x < roi.x1; ++x) {
            const double checker = ((x + y) % 2 == 0) ? 1.0 : -1.0;
            const double texture = label == 1 ? amplitude * checker : 0.0;
            s.image(y, x) = cfg.roi_mean + texture + rng.normal(0.0, cfg.background_std);
        }
    }
    for (auto& v : s.image.values) v = to_pixel(v);
    s.roi_mask = rasterize(s.roi_boxes, H, W);

    const double sigma = cfg.privileged_noise;
    const double cx = 0.5 * (roi.x0 + roi.x1) / static_cast<double>(W);
    const double cy = 0.5 * (roi.y0 + roi.y1) / static_cast<double>(H);
    s.privileged = {cx + rng.normal(0.0, sigma),
                    cy + rng.normal(0.0, sigma),
                    (roi.x1 - roi.x0) / static_cast<double>(W) + rng.normal(0.0, sigma),
                    (roi.y1 - roi.y0) / static_cast<double>(H) + rng.normal(0.0, sigma),
                    static_cast<double>(label) + rng.normal(0.0, sigma)};
    for (std::size_t k = 5; k < cfg.privileged_dim; ++k) s.privileged.push_back(rng.normal());
    return s;
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.height = cfg.height;
    ds.width = cfg.width;
    ds.privileged_dim = cfg.privileged_dim;
    ds.generator = cfg;
    std::uint64_t next_index = 0;
    for (Split sp : kAllSplits) {
        const std::size_t n = cfg.count(sp);
        Rng rng = Rng::derive(cfg.seed, "data/" + split_name(sp));
        std::vector<int> labels(n, 0);
        for (std::size_t i = 0; i < n / 2; ++i) labels[i] = 1;
        // odd counts: the extra sample's class is itself random
        if (n % 2 == 1) labels[n / 2] = static_cast<int>(rng.integer(0, 1));
        rng.shuffle(labels);
        auto& out = ds.split(sp);
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "%s-%05zu", split_name(sp).c_str(), i);
            out.push_back(generate_sample(cfg, rng, labels[i], next_index++, id));
        }
    }
    return ds;
}

std::vector<std::vector<double>> privileged_matrix(const std::vector<Sample>& samples) {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.privileged);
    return out;
}

std::vector<int> labels_of(const std::vector<Sample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

}  // namespace mmpkd::data
