#include "mmpkd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "mmpkd/auroc.hpp"
#include "mmpkd/digest.hpp"

namespace mmpkd::experiment {

using nlohmann::json;
namespace fs = std::filesystem;
using distill::Mode;
using student::ExtractionMethod;

namespace {

constexpr Mode kModes[] = {Mode::Baseline, Mode::Mmpkd};
constexpr ExtractionMethod kMethods[] = {ExtractionMethod::LastCls, ExtractionMethod::Rollout};

std::string digest_of(const json& j) { return sha256_hex(j.dump()); }

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

json training_json(const distill::DistillConfig& t) {
    return {{"lambda", t.lambda},
            {"temperature", t.temperature},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"patience", t.patience}};
}

json read_json(const fs::path& path, const std::string& code) {
    if (!fs::exists(path)) throw PreconditionError(code, "missing " + path.string());
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw PreconditionError("corrupt_artifact", path.string() + ": " + e.what());
    }
}

std::string recorded_digest(const json& j) {
    return j.contains("config_digest") && j["config_digest"].is_string() ? j["config_digest"].get<std::string>() : "";
}

std::vector<std::uint64_t> sorted_seeds(const ExperimentConfig& c) {
    auto s = c.seeds;
    std::sort(s.begin(), s.end());
    return s;
}

std::string fmt_seconds(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", s);
    return buf;
}

// Cells of our own metrics CSV; the format has no quoting.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

student::VitConfig experiment_architecture() {
    student::VitConfig v;
    v.dim = 32;
    v.mlp_hidden = 128;
    return v;
}

void ExperimentConfig::validate() const {
    generator.validate();
    student.validate();
    if (!dataset_dir && (student.image_height != generator.height || student.image_width != generator.width))
        throw std::invalid_argument("config: student image size must match the generator (" +
                                    std::to_string(generator.width) + "x" + std::to_string(generator.height) + ")");
    auto t = training;
    t.mode = Mode::Mmpkd;
    t.validate();
    if (lambda_grid.empty() || temperature_grid.empty()) throw std::invalid_argument("config: empty lambda/temperature grid");
    for (double l : lambda_grid)
        if (!(l >= 0.0 && l <= 1.0)) throw std::invalid_argument("config: lambda grid values must lie in [0, 1]");
    for (double v : temperature_grid)
        if (!(v >= 1.0)) throw std::invalid_argument("config: temperature grid values must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: seed list is empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw std::invalid_argument("config: duplicate seeds");
    if (!(boxes.quantile > 0.0 && boxes.quantile < 1.0)) throw std::invalid_argument("config: box quantile must lie in (0, 1)");
    if (overlay_scale == 0) throw std::invalid_argument("config: overlay_scale must be positive");
}

void to_json(json& j, const ExperimentConfig& c) {
    j = {{"dataset_dir", c.dataset_dir ? json(c.dataset_dir->string()) : json(nullptr)},
         {"generator", c.generator},
         {"teacher", {{"variant", teacher::variant_name(c.teacher_variant)},
                      {"seed", c.teacher_seed},
                      {"hyperparams", c.teacher_hyperparams}}},
         {"student", c.student},
         {"training", training_json(c.training)},
         {"grid", {{"lambda", c.lambda_grid}, {"temperature", c.temperature_grid}}},
         {"seeds", c.seeds},
         {"evaluation", {{"method", student::method_name(c.method)},
                         {"boxes", c.boxes},
                         {"overlays_per_mode", c.overlays_per_mode},
                         {"overlay_scale", c.overlay_scale}}}};
}

void from_json(const json& j, ExperimentConfig& c) {
    reject_unknown(j, {"output_dir", "config_digest", "dataset_dir", "generator", "teacher", "student", "training", "grid", "seeds", "evaluation"},
                   "top level");
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("dataset_dir"))
        c.dataset_dir = j["dataset_dir"].is_null() ? std::nullopt : std::optional<fs::path>(j["dataset_dir"].get<std::string>());
    if (j.contains("generator")) {
        // merge over the current values so partial sections work
        json g = c.generator;
        g.update(j["generator"]);
        c.generator = g.get<data::GeneratorConfig>();
    }
    if (j.contains("teacher")) {
        const auto& t = j["teacher"];
        reject_unknown(t, {"variant", "seed", "hyperparams"}, "teacher");
        if (t.contains("variant")) c.teacher_variant = teacher::parse_variant(t["variant"].get<std::string>());
        if (t.contains("seed")) c.teacher_seed = t["seed"].get<std::uint64_t>();
        if (t.contains("hyperparams")) {
            json h = c.teacher_hyperparams;
            h.merge_patch(t["hyperparams"]);
            c.teacher_hyperparams = h.get<teacher::Hyperparams>();
        }
    }
    if (j.contains("student")) {
        json s = c.student;
        s.update(j["student"]);
        c.student = s.get<student::VitConfig>();
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        reject_unknown(t, {"lambda", "temperature", "epochs", "batch_size", "learning_rate", "patience"}, "training");
        c.training.lambda = t.value("lambda", c.training.lambda);
        c.training.temperature = t.value("temperature", c.training.temperature);
        c.training.epochs = t.value("epochs", c.training.epochs);
        c.training.batch_size = t.value("batch_size", c.training.batch_size);
        c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
        c.training.patience = t.value("patience", c.training.patience);
    }
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        reject_unknown(g, {"lambda", "temperature"}, "grid");
        if (g.contains("lambda")) c.lambda_grid = g["lambda"].get<std::vector<double>>();
        if (g.contains("temperature")) c.temperature_grid = g["temperature"].get<std::vector<double>>();
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("evaluation")) {
        const auto& e = j["evaluation"];
        reject_unknown(e, {"method", "boxes", "overlays_per_mode", "overlay_scale"}, "evaluation");
        if (e.contains("method")) c.method = student::parse_method(e["method"].get<std::string>());
        if (e.contains("boxes")) {
            json b = c.boxes;
            b.update(e["boxes"]);
            c.boxes = b.get<eval::BoxParams>();
        }
        c.overlays_per_mode = e.value("overlays_per_mode", c.overlays_per_mode);
        c.overlay_scale = e.value("overlay_scale", c.overlay_scale);
    }
}

ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw PreconditionError("missing_config", "config file not found: " + path.string());
    ExperimentConfig c;
    try {
        json::parse(read_file(path)).get_to(c);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return c;
}

std::string config_digest(const ExperimentConfig& c) { return digest_of(json(c)); }

std::string data_digest(const ExperimentConfig& c) {
    if (!c.dataset_dir) return digest_of({{"generator", c.generator}});
    const auto manifest = read_json(*c.dataset_dir / "manifest.json", "missing_dataset");
    return digest_of({{"external", manifest.at("digest")}});
}

std::string teacher_digest(const ExperimentConfig& c) {
    return digest_of({{"data", data_digest(c)},
                      {"variant", teacher::variant_name(c.teacher_variant)},
                      {"seed", c.teacher_seed},
                      {"hyperparams", c.teacher_hyperparams}});
}

std::string train_digest(const ExperimentConfig& c, Mode mode) {
    json j = {{"data", data_digest(c)}, {"student", c.student}, {"mode", distill::mode_name(mode)}};
    json t = training_json(c.training);
    if (mode == Mode::Mmpkd) {
        j["teacher"] = teacher_digest(c);
    } else {
        t.erase("lambda");
        t.erase("temperature");
    }
    j["training"] = t;
    return digest_of(j);
}

std::string eval_digest(const ExperimentConfig& c, Mode mode, ExtractionMethod method) {
    return digest_of({{"train", train_digest(c, mode)}, {"method", student::method_name(method)}, {"boxes", c.boxes}});
}

fs::path Paths::data() const { return root / "data"; }
fs::path Paths::teacher() const { return root / "teachers" / "teacher.json"; }
fs::path Paths::run(Mode mode, std::uint64_t seed) const {
    return root / "runs" / distill::mode_name(mode) / std::to_string(seed);
}
fs::path Paths::checkpoint(Mode mode, std::uint64_t seed) const { return run(mode, seed) / "student.ckpt"; }
fs::path Paths::train_record(Mode mode, std::uint64_t seed) const { return run(mode, seed) / "train.json"; }
fs::path Paths::metrics_csv(Mode mode, std::uint64_t seed, ExtractionMethod m) const {
    return run(mode, seed) / ("metrics_" + student::method_name(m) + ".csv");
}
fs::path Paths::metrics_summary(Mode mode, std::uint64_t seed, ExtractionMethod m) const {
    return run(mode, seed) / ("metrics_" + student::method_name(m) + ".json");
}
fs::path Paths::reports() const { return root / "reports"; }
fs::path Paths::overlays() const { return root / "reports" / "overlays"; }

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Experiment::Experiment(ExperimentConfig cfg, Options opts)
    : cfg_(std::move(cfg)), opts_(opts), paths_{cfg_.output_dir} {
    cfg_.validate();
}

void Experiment::log(const std::string& line) const {
    if (opts_.log && !opts_.quiet) *opts_.log << line << std::endl;
}

void Experiment::warn_or_fail(const std::string& what, const std::string& recorded, const std::string& expected) const {
    if (recorded == expected) return;
    const std::string msg = "config digest mismatch for " + what + ": artifact " +
                            (recorded.empty() ? std::string("<none>") : recorded.substr(0, 12)) + ", config " +
                            expected.substr(0, 12);
    if (opts_.strict) throw PreconditionError("digest_mismatch", msg);
    if (opts_.log) *opts_.log << "warning: " << msg << " (pass --strict to refuse)" << std::endl;
}

void Experiment::generate() {
    if (cfg_.dataset_dir) {
        log("generate: external dataset " + cfg_.dataset_dir->string() + " configured, nothing to do");
        return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto ds = data::generate_dataset(cfg_.generator);
    const fs::path dir = paths_.data(), tmp = dir.string() + ".tmp";
    fs::remove_all(tmp);
    data::write_dataset(ds, tmp);
    auto manifest = json::parse(read_file(tmp / "manifest.json"));
    manifest["config_digest"] = data_digest(cfg_);
    write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");
    fs::remove_all(dir);
    fs::rename(tmp, dir);
    log("generate: " + std::to_string(ds.train.size() + ds.val.size() + ds.test.size()) + " samples -> " +
        dir.string() + " (" + fmt_seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
        ")");
}

data::Dataset Experiment::load_dataset() const {
    const fs::path dir = cfg_.dataset_dir ? *cfg_.dataset_dir : paths_.data();
    if (!fs::exists(dir / "manifest.json"))
        throw PreconditionError("missing_dataset", "no dataset at " + dir.string() + " (run generate first)");
    if (!cfg_.dataset_dir) warn_or_fail("dataset", recorded_digest(read_json(dir / "manifest.json", "missing_dataset")),
                                        data_digest(cfg_));
    try {
        return data::read_dataset(dir);
    } catch (const data::DatasetError& e) {
        throw PreconditionError("corrupt_dataset", e.what());
    }
}

teacher::TeacherModel Experiment::train_teacher() {
    const auto ds = load_dataset();
    auto columns = [](const std::vector<data::Sample>& s) {
        std::pair<std::vector<std::vector<double>>, std::vector<int>> out;
        for (const auto& x : s) {
            out.first.push_back(x.privileged);
            out.second.push_back(x.label);
        }
        return out;
    };
    const auto [xtr, ytr] = columns(ds.train);
    const auto [xva, yva] = columns(ds.val);
    auto model = teacher::train_teacher(xtr, ytr, cfg_.teacher_variant, cfg_.teacher_hyperparams, cfg_.teacher_seed,
                                        teacher::LabeledFeatures{&xva, &yva});
    std::vector<double> p;
    for (const auto& x : xva) p.push_back(model.probability(x));
    const auto val_auroc = auroc(p, yva);

    json j = model.to_json();
    j["config_digest"] = teacher_digest(cfg_);
    j["validation_auroc"] = val_auroc ? json(*val_auroc) : json(nullptr);
    write_file_atomic(paths_.teacher(), j.dump(2) + "\n");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", val_auroc.value_or(0.0));
    log("train-teacher: " + teacher::variant_name(cfg_.teacher_variant) + " val AUROC " + buf + " -> " +
        paths_.teacher().string());
    return model;
}

distill::TrainResult Experiment::train_student(Mode mode, std::uint64_t seed, const std::optional<fs::path>& teacher_path) {
    std::optional<teacher::TeacherModel> teacher;
    if (mode == Mode::Mmpkd) {
        if (!teacher_path)
            throw PreconditionError("teacher_required", "teacher required for mode mmpkd (pass --teacher <file>)");
        const auto j = read_json(*teacher_path, "missing_teacher");
        warn_or_fail("teacher " + teacher_path->string(), recorded_digest(j), teacher_digest(cfg_));
        try {
            teacher = teacher::TeacherModel::from_json(j);
        } catch (const std::exception& e) {
            throw PreconditionError("corrupt_artifact", teacher_path->string() + ": " + e.what());
        }
        teacher->freeze();
    }
    const auto ds = load_dataset();
    auto dc = cfg_.training;
    dc.mode = mode;
    dc.seed = seed;
    const std::string tag = distill::mode_name(mode) + "/" + std::to_string(seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto result = distill::train_student(ds, teacher ? &*teacher : nullptr, dc, cfg_.student,
                                         [&](const distill::EpochEvent& e) {
                                             char buf[96];
                                             std::snprintf(buf, sizeof buf, " epoch %zu train %.4f val %.4f", e.epoch,
                                                           e.train_loss, e.val_loss);
                                             log("train-student " + tag + buf);
                                         });

    // nothing touches the run directory until training succeeded
    const fs::path ckpt = paths_.checkpoint(mode, seed), tmp = ckpt.string() + ".tmp";
    fs::create_directories(ckpt.parent_path());
    result.model.save(tmp);
    fs::rename(tmp, ckpt);
    json rec = {{"config_digest", train_digest(cfg_, mode)},
                {"mode", distill::mode_name(mode)},
                {"seed", seed},
                {"checkpoint", ckpt.filename().string()},
                {"checkpoint_sha256", sha256_hex(read_file(ckpt))},
                {"result", result}};
    write_file_atomic(paths_.train_record(mode, seed), rec.dump(2) + "\n");
    char buf[96];
    std::snprintf(buf, sizeof buf, " done: best epoch %zu, val AUROC %.4f (", result.best_epoch,
                  result.val_auroc.value_or(0.0));
    log("train-student " + tag + buf +
        fmt_seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + ")");
    return result;
}

eval::RunMetrics Experiment::evaluate(Mode mode, std::uint64_t seed, ExtractionMethod method) {
    const fs::path ckpt = paths_.checkpoint(mode, seed);
    if (!fs::exists(ckpt))
        throw PreconditionError("missing_checkpoint", "no checkpoint at " + ckpt.string() + " (run train-student first)");
    const auto rec = read_json(paths_.train_record(mode, seed), "missing_checkpoint");
    warn_or_fail("run " + paths_.run(mode, seed).string(), recorded_digest(rec), train_digest(cfg_, mode));
    const auto model = student::StudentViT::load(ckpt);
    const auto ds = load_dataset();
    const auto out = eval::evaluate_run(model, ds.test, method, cfg_.boxes);

    const std::string csv = eval::metrics_csv(out.metrics);
    write_file_atomic(paths_.metrics_csv(mode, seed, method), csv);
    json summary = {{"config_digest", eval_digest(cfg_, mode, method)},
                    {"mode", distill::mode_name(mode)},
                    {"seed", seed},
                    {"method", student::method_name(method)},
                    {"boxes", cfg_.boxes},
                    {"metrics_csv", paths_.metrics_csv(mode, seed, method).filename().string()},
                    {"metrics_csv_sha256", sha256_hex(csv)},
                    {"summary", eval::metrics_summary(out.metrics)}};
    write_file_atomic(paths_.metrics_summary(mode, seed, method), summary.dump(2) + "\n");
    log("evaluate " + distill::mode_name(mode) + "/" + std::to_string(seed) + " " + student::method_name(method) +
        " -> " + paths_.metrics_csv(mode, seed, method).string());
    return out.metrics;
}

stats::ComparisonReport Experiment::compare(ExtractionMethod method, bool pooled, double alpha, bool two_sided) {
    std::vector<stats::MetricSpec> specs;
    if (!pooled) specs.push_back({"predictive_auroc", stats::Direction::HigherIsBetter});
    specs.push_back({"pixel_auroc", stats::Direction::HigherIsBetter});
    specs.push_back({"iou", stats::Direction::HigherIsBetter});
    specs.push_back({"fpr", stats::Direction::LowerIsBetter});

    std::map<std::string, std::vector<double>> values[2];
    for (int mi = 0; mi < 2; ++mi) {
        const Mode mode = kModes[mi];
        auto& v = values[mi];
        for (const auto& s : specs) v[s.name];
        for (auto seed : sorted_seeds(cfg_)) {
            const auto path = paths_.metrics_summary(mode, seed, method);
            const auto j = read_json(path, "missing_metrics");
            warn_or_fail(path.string(), recorded_digest(j), eval_digest(cfg_, mode, method));
            if (pooled) {
                const auto rows = parse_csv(read_file(paths_.metrics_csv(mode, seed, method)));
                for (std::size_t r = 1; r < rows.size(); ++r) {
                    const auto& cells = rows[r];
                    if (cells.size() < 4) throw PreconditionError("corrupt_artifact", "short row in metrics CSV");
                    if (!cells[1].empty()) v["pixel_auroc"].push_back(std::stod(cells[1]));
                    v["iou"].push_back(std::stod(cells[2]));
                    v["fpr"].push_back(std::stod(cells[3]));
                }
                continue;
            }
            const auto& s = j.at("summary");
            if (!s["predictive_auroc"].is_null()) v["predictive_auroc"].push_back(s["predictive_auroc"].get<double>());
            for (const char* key : {"pixel_auroc", "iou", "fpr"})
                if (!s[key].is_null()) v[key].push_back(s[key]["mean"].get<double>());
        }
        for (const auto& [name, xs] : v)
            if (xs.empty())
                throw PreconditionError("missing_metrics", "no defined values of " + name + " for " + distill::mode_name(mode));
    }
    return stats::compare_methods(values[0], values[1], specs, alpha, two_sided);
}

void Experiment::write_reports(bool pooled, double alpha, bool two_sided) {
    const auto digest = config_digest(cfg_);
    json files = json::object();
    for (auto method : kMethods) {
        const auto r = compare(method, pooled, alpha, two_sided);
        std::string seeds;
        for (auto s : sorted_seeds(cfg_)) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
        const std::string text = "baseline vs mmpkd, attention map: " + student::method_name(method) +
                                 ", aggregation: " + (pooled ? "per image" : "per seed") + ", seeds: " + seeds + "\n\n" +
                                 stats::render_text(r) + "config digest: " + digest + "\n";
        const std::string csv = stats::render_csv(r);
        const std::string stem = "comparison_" + student::method_name(method);
        write_file_atomic(paths_.reports() / (stem + ".txt"), text);
        write_file_atomic(paths_.reports() / (stem + ".csv"), csv);
        files[stem + ".txt"] = sha256_hex(text);
        files[stem + ".csv"] = sha256_hex(csv);
        log("compare: " + (paths_.reports() / (stem + ".txt")).string());
    }
    const json manifest = {{"config_digest", digest},
                           {"aggregation", pooled ? "per_image" : "per_seed"},
                           {"alpha", alpha},
                           {"two_sided", two_sided},
                           {"files", files}};
    write_file_atomic(paths_.reports() / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<fs::path> Experiment::render(Mode mode, std::uint64_t seed, std::size_t count, ExtractionMethod method) {
    const fs::path ckpt = paths_.checkpoint(mode, seed);
    if (!fs::exists(ckpt))
        throw PreconditionError("missing_checkpoint", "no checkpoint at " + ckpt.string() + " (run train-student first)");
    const auto model = student::StudentViT::load(ckpt);
    auto samples = load_dataset().test;
    std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    samples.resize(std::min(count, samples.size()));

    std::vector<fs::path> written;
    for (const auto& s : samples) {
        const auto [logit, rec] = model.infer(s.image);
        const auto map = student::extract_attention_map(rec, method).normalized;
        const auto pred = eval::extract_boxes(map, cfg_.boxes);
        const auto path = paths_.overlays() / (distill::mode_name(mode) + "_" + std::to_string(seed) + "_" +
                                               student::method_name(method) + "_" + s.id + ".ppm");
        write_file_atomic(path, eval::render_overlay(s.image, map, pred, s.roi_boxes, cfg_.overlay_scale));
        written.push_back(path);
    }
    log("render: " + std::to_string(written.size()) + " overlays -> " + paths_.overlays().string());
    return written;
}

distill::GridResult Experiment::grid_search() {
    const auto j = read_json(paths_.teacher(), "missing_teacher");
    warn_or_fail("teacher " + paths_.teacher().string(), recorded_digest(j), teacher_digest(cfg_));
    auto teacher = teacher::TeacherModel::from_json(j);
    teacher.freeze();
    const auto ds = load_dataset();
    auto base = cfg_.training;
    base.mode = Mode::Mmpkd;
    const auto seeds = sorted_seeds(cfg_);
    const auto g = distill::grid_search(ds, teacher, cfg_.lambda_grid, cfg_.temperature_grid, seeds, base, cfg_.student);
    const json out = {{"config_digest", train_digest(cfg_, Mode::Mmpkd)}, {"grid", g}};
    write_file_atomic(paths_.reports() / "grid_search.json", out.dump(2) + "\n");
    char buf[96];
    std::snprintf(buf, sizeof buf, "grid-search: best lambda %g, T %g (val AUROC %.4f)", g.table[g.best].lambda,
                  g.table[g.best].temperature, g.table[g.best].mean);
    log(buf);
    return g;
}

void Experiment::run_pipeline() {
    const auto t0 = std::chrono::steady_clock::now();
    json effective = cfg_;
    effective["config_digest"] = config_digest(cfg_);
    write_file_atomic(paths_.root / "config.json", effective.dump(2) + "\n");

    generate();
    train_teacher();
    for (auto mode : kModes)
        for (auto seed : sorted_seeds(cfg_)) {
            train_student(mode, seed, paths_.teacher());
            for (auto method : kMethods) evaluate(mode, seed, method);
        }
    write_reports();
    for (auto mode : kModes) render(mode, sorted_seeds(cfg_).front(), cfg_.overlays_per_mode, cfg_.method);
    log("pipeline: done in " + fmt_seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
}

}  // namespace mmpkd::experiment
