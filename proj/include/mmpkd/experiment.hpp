#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpkd/attention_eval.hpp"
#include "mmpkd/distill.hpp"
#include "mmpkd/synth_data.hpp"
#include "mmpkd/teacher.hpp"
#include "mmpkd/vit.hpp"

namespace mmpkd::experiment {

// Narrower than the library VitConfig default so 2 x 5 runs fit a laptop budget.
student::VitConfig experiment_architecture();

struct ExperimentConfig {
    std::filesystem::path output_dir = "mmpkd-out";
    std::optional<std::filesystem::path> dataset_dir;  // external dataset instead of <out>/data
    data::GeneratorConfig generator;
    teacher::Variant teacher_variant = teacher::Variant::Logistic;
    teacher::Hyperparams teacher_hyperparams;
    std::uint64_t teacher_seed = 0;
    student::VitConfig student = experiment_architecture();
    distill::DistillConfig training;  // mode and seed are per run
    std::vector<double> lambda_grid{0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> temperature_grid{1.0, 2.0, 4.0, 8.0};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    student::ExtractionMethod method = student::ExtractionMethod::LastCls;
    eval::BoxParams boxes;
    std::size_t overlays_per_mode = 6;
    std::size_t overlay_scale = 4;

    void validate() const;
};

// output_dir is not serialized: moving a run tree does not change digests.
void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// Failure with a stable machine-readable code (exit status 2 in the CLI).
class PreconditionError : public std::runtime_error {
public:
    PreconditionError(std::string code, const std::string& message)
        : std::runtime_error(message), code(std::move(code)) {}
    std::string code;
};

// SHA-256 over the canonical JSON of the config sections each stage depends on.
std::string config_digest(const ExperimentConfig& c);  // whole config
std::string data_digest(const ExperimentConfig& c);
std::string teacher_digest(const ExperimentConfig& c);
std::string train_digest(const ExperimentConfig& c, distill::Mode mode);
std::string eval_digest(const ExperimentConfig& c, distill::Mode mode, student::ExtractionMethod method);

struct Paths {
    std::filesystem::path root;

    std::filesystem::path data() const;
    std::filesystem::path teacher() const;  // teachers/teacher.json
    std::filesystem::path run(distill::Mode mode, std::uint64_t seed) const;
    std::filesystem::path checkpoint(distill::Mode mode, std::uint64_t seed) const;
    std::filesystem::path train_record(distill::Mode mode, std::uint64_t seed) const;
    std::filesystem::path metrics_csv(distill::Mode mode, std::uint64_t seed, student::ExtractionMethod m) const;
    std::filesystem::path metrics_summary(distill::Mode mode, std::uint64_t seed, student::ExtractionMethod m) const;
    std::filesystem::path reports() const;
    std::filesystem::path overlays() const;
};

struct Options {
    bool strict = false;          // digest mismatch is an error instead of a warning
    bool quiet = false;           // suppress progress lines, keep warnings
    std::ostream* log = nullptr;  // progress and warnings; null is silent
};

class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg, Options opts = {});

    const ExperimentConfig& config() const { return cfg_; }
    const Paths& paths() const { return paths_; }

    void generate();
    teacher::TeacherModel train_teacher();
    // teacher_path is required for mmpkd and ignored for baseline.
    distill::TrainResult train_student(distill::Mode mode, std::uint64_t seed,
                                       const std::optional<std::filesystem::path>& teacher_path);
    eval::RunMetrics evaluate(distill::Mode mode, std::uint64_t seed, student::ExtractionMethod method);
    // Reads only per-run summaries (or per-image CSVs when pooled) from disk.
    stats::ComparisonReport compare(student::ExtractionMethod method, bool pooled = false, double alpha = 0.05,
                                    bool two_sided = true);
    void write_reports(bool pooled = false, double alpha = 0.05, bool two_sided = true);
    std::vector<std::filesystem::path> render(distill::Mode mode, std::uint64_t seed, std::size_t count,
                                              student::ExtractionMethod method);
    distill::GridResult grid_search();
    // generate, teacher, 2 x seeds training runs, both extraction methods, reports, overlays.
    void run_pipeline();

    data::Dataset load_dataset() const;

private:
    void warn_or_fail(const std::string& what, const std::string& recorded, const std::string& expected) const;
    void log(const std::string& line) const;

    ExperimentConfig cfg_;
    Options opts_;
    Paths paths_;
};

// Write to a sibling temp file and rename, so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace mmpkd::experiment
