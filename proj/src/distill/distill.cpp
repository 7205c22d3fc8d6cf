#include "mmpkd/distill.hpp"

#include <cmath>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mmpkd/auroc.hpp"
#include "mmpkd/optim.hpp"
#include "mmpkd/rng.hpp"
#include "mmpkd/stats.hpp"

namespace mmpkd::distill {

using nlohmann::json;
using nn::Tensor;

std::string mode_name(Mode m) { return m == Mode::Baseline ? "baseline" : "mmpkd"; }

Mode parse_mode(const std::string& s) {
    if (s == "baseline") return Mode::Baseline;
    if (s == "mmpkd") return Mode::Mmpkd;
    throw std::invalid_argument("unknown mode '" + s + "' (expected baseline or mmpkd)");
}

namespace {

void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
}

void check_temperature(double t) {
    if (!(t >= 1.0) || !std::isfinite(t)) {
        throw std::invalid_argument("temperature must be >= 1, got " + std::to_string(t));
    }
}

}  // namespace

void DistillConfig::validate() const {
    if (mode == Mode::Mmpkd) {
        check_lambda(lambda);
        check_temperature(temperature);
    }
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
}

void to_json(json& j, const DistillConfig& c) {
    j = {{"mode", mode_name(c.mode)},
         {"lambda", nullptr},
         {"temperature", nullptr},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"patience", c.patience},
         {"seed", c.seed}};
    if (c.mode == Mode::Mmpkd) {
        j["lambda"] = c.lambda;
        j["temperature"] = c.temperature;
    }
}

void from_json(const json& j, DistillConfig& c) {
    DistillConfig d;
    c.mode = parse_mode(j.value("mode", mode_name(d.mode)));
    auto num = [&](const char* key, double fallback) {
        return j.contains(key) && !j[key].is_null() ? j[key].get<double>() : fallback;
    };
    c.lambda = num("lambda", d.lambda);
    c.temperature = num("temperature", d.temperature);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.patience = j.value("patience", d.patience);
    c.seed = j.value("seed", d.seed);
}

Tensor compute_distill_loss(std::span<const double> hard, std::span<const double> soft, const Tensor& p, double lambda) {
    check_lambda(lambda);
    const std::size_t n = p.numel();
    if (p.rank() != 1 || hard.size() != n || soft.size() != n) {
        throw nn::ShapeError("distill loss: predictions " + nn::shape_str(p.shape()) + " with " +
                             std::to_string(hard.size()) + " hard and " + std::to_string(soft.size()) + " soft labels");
    }
    for (double y : hard)
        if (y != 0.0 && y != 1.0) throw std::invalid_argument("hard labels must be 0 or 1");
    auto y = Tensor::from_data({n}, std::vector<double>(hard.begin(), hard.end()));
    auto s = Tensor::from_data({n}, std::vector<double>(soft.begin(), soft.end()));
    return nn::add(nn::scale(nn::binary_cross_entropy(p, y), 1.0 - lambda),
                   nn::scale(nn::binary_cross_entropy(p, s), lambda));
}

NanLossError::NanLossError(std::size_t epoch_, std::size_t step_, double value)
    : std::runtime_error("non-finite loss (" + std::to_string(value) + ") at epoch " + std::to_string(epoch_) +
                         ", step " + std::to_string(step_)),
      epoch(epoch_),
      step(step_) {}

std::vector<double> predict(const student::StudentViT& model, const std::vector<data::Sample>& samples,
                            std::size_t batch_size) {
    std::vector<double> out;
    out.reserve(samples.size());
    std::vector<const Image*> batch;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        batch.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i)
            batch.push_back(&samples[i].image);
        const auto r = model.forward(std::span<const Image* const>(batch));
        for (double z : r.logits.data()) out.push_back(nn::sigmoid_scalar(z));
    }
    return out;
}

namespace {

double mean_bce(std::span<const double> p, const std::vector<data::Sample>& samples) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], nn::kProbEps, 1.0 - nn::kProbEps);
        s -= samples[i].label == 1 ? std::log(q) : std::log1p(-q);
    }
    return s / static_cast<double>(p.size());
}

std::vector<std::vector<double>> snapshot(const student::StudentViT& m) {
    std::vector<std::vector<double>> w;
    for (const auto& p : m.parameters()) w.emplace_back(p.data().begin(), p.data().end());
    return w;
}

void restore(student::StudentViT& m, const std::vector<std::vector<double>>& w) {
    const auto& params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto t = params[i];
        std::copy(w[i].begin(), w[i].end(), t.mutable_data().begin());
    }
}

}  // namespace

namespace {

// Every step allocates and frees the same multi-MB activation buffers. With the
// default mmap threshold each one is a fresh mapping plus page faults, which
// cost as much as the arithmetic; keep them on the heap instead.
void keep_buffers_on_heap() {
#ifdef __GLIBC__
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}

}  // namespace

TrainResult train_student(const data::Dataset& ds, const teacher::TeacherModel* teacher, const DistillConfig& cfg,
                          const student::VitConfig& arch, const EpochCallback& on_epoch) {
    cfg.validate();
    keep_buffers_on_heap();
    const bool distill = cfg.mode == Mode::Mmpkd;
    if (distill) {
        if (teacher == nullptr) throw std::invalid_argument("teacher required for mode mmpkd");
        if (!teacher->frozen()) throw teacher::NotFrozenError("teacher must be frozen before distillation");
    }
    if (ds.train.empty()) throw std::invalid_argument("training split is empty");
    if (ds.height != arch.image_height || ds.width != arch.image_width) {
        throw std::invalid_argument("dataset images are " + std::to_string(ds.width) + "x" + std::to_string(ds.height) +
                                    " but student expects " + std::to_string(arch.image_width) + "x" +
                                    std::to_string(arch.image_height));
    }

    const std::size_t n = ds.train.size();
    std::vector<double> hard(n), soft;
    for (std::size_t i = 0; i < n; ++i) hard[i] = ds.train[i].label;
    if (distill) {
        // teacher is frozen, so soft labels are constant for the whole run
        for (const auto& s : teacher::soft_labels(*teacher, data::privileged_matrix(ds.train), cfg.temperature))
            soft.push_back(s.value);
    }

    TrainResult res{student::StudentViT(arch, cfg.seed), cfg, arch, {}, {}, std::nullopt, 0, 0, false};
    auto& model = res.model;
    nn::Adam adam(model.parameters(), nn::AdamConfig{cfg.learning_rate});
    Rng shuffle = Rng::derive(cfg.seed, "student/shuffle");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<const Image*> imgs;
    std::vector<double> by, bs;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_weights = snapshot(model);
    std::size_t bad_epochs = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle.shuffle(order);
        double total = 0.0;
        std::size_t step = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            imgs.clear();
            by.clear();
            bs.clear();
            for (std::size_t i = start; i < end; ++i) {
                imgs.push_back(&ds.train[order[i]].image);
                by.push_back(hard[order[i]]);
                if (distill) bs.push_back(soft[order[i]]);
            }
            const auto fwd = model.forward(std::span<const Image* const>(imgs));
            const auto p = nn::sigmoid(fwd.logits);
            const Tensor loss =
                distill ? compute_distill_loss(by, bs, p, cfg.lambda)
                        : nn::binary_cross_entropy(p, Tensor::from_data({by.size()}, std::vector<double>(by)));
            const double v = loss.item();
            if (!std::isfinite(v)) throw NanLossError(epoch, step, v);
            loss.backward();
            adam.step();
            total += v * static_cast<double>(end - start);
        }
        const double train_loss = total / static_cast<double>(n);
        const double val_loss = ds.val.empty() ? train_loss : mean_bce(predict(model, ds.val), ds.val);
        if (!std::isfinite(val_loss)) throw NanLossError(epoch, step, val_loss);
        res.train_loss.push_back(train_loss);
        res.val_loss.push_back(val_loss);
        res.epochs_run = epoch;
        if (on_epoch) on_epoch({epoch, train_loss, val_loss});

        if (val_loss < best) {
            best = val_loss;
            res.best_epoch = epoch;
            best_weights = snapshot(model);
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.patience && cfg.patience > 0) {
            res.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    restore(model, best_weights);
    if (!ds.val.empty()) {
        const auto p = predict(model, ds.val);
        res.val_auroc = auroc(p, data::labels_of(ds.val));
    }
    return res;
}

void to_json(json& j, const TrainResult& r) {
    j = {{"config", r.config},
         {"architecture", r.architecture},
         {"train_loss", r.train_loss},
         {"val_loss", r.val_loss},
         {"val_auroc", r.val_auroc ? json(*r.val_auroc) : json(nullptr)},
         {"best_epoch", r.best_epoch},
         {"epochs_run", r.epochs_run},
         {"stopped_early", r.stopped_early}};
}

GridResult grid_search(std::span<const double> lambdas, std::span<const double> temperatures,
                       std::span<const std::uint64_t> seeds, const CellEvaluator& evaluate) {
    if (lambdas.empty() || temperatures.empty() || seeds.empty()) throw std::invalid_argument("grid search: empty grid");
    for (double l : lambdas) check_lambda(l);
    for (double t : temperatures) check_temperature(t);

    GridResult out;
    for (double l : lambdas) {
        for (double t : temperatures) {
            GridCell cell{l, t, {}, 0.0, std::nullopt};
            for (auto seed : seeds) cell.val_aurocs.push_back(evaluate(l, t, seed));
            const auto summary = stats::aggregate(cell.val_aurocs);
            cell.mean = summary.mean;
            cell.std = summary.std;
            out.table.push_back(std::move(cell));
        }
    }
    for (std::size_t i = 1; i < out.table.size(); ++i) {
        const auto& c = out.table[i];
        const auto& b = out.table[out.best];
        const bool better = c.mean > b.mean ||
                            (c.mean == b.mean && (c.lambda < b.lambda ||
                                                  (c.lambda == b.lambda && c.temperature < b.temperature)));
        if (better) out.best = i;
    }
    return out;
}

GridResult grid_search(const data::Dataset& ds, const teacher::TeacherModel& teacher, std::span<const double> lambdas,
                       std::span<const double> temperatures, std::span<const std::uint64_t> seeds,
                       const DistillConfig& base, const student::VitConfig& arch) {
    return grid_search(lambdas, temperatures, seeds, [&](double l, double t, std::uint64_t seed) {
        DistillConfig c = base;
        c.mode = Mode::Mmpkd;
        c.lambda = l;
        c.temperature = t;
        c.seed = seed;
        const auto r = train_student(ds, &teacher, c, arch);
        return r.val_auroc.value_or(0.5);
    });
}

void to_json(json& j, const GridResult& g) {
    j = json::object();
    auto rows = json::array();
    for (const auto& c : g.table) {
        rows.push_back({{"lambda", c.lambda},
                        {"temperature", c.temperature},
                        {"val_aurocs", c.val_aurocs},
                        {"mean", c.mean},
                        {"std", c.std ? json(*c.std) : json(nullptr)}});
    }
    j["table"] = rows;
    j["best"] = {{"lambda", g.table[g.best].lambda}, {"temperature", g.table[g.best].temperature}};
}

}  // namespace mmpkd::distill
