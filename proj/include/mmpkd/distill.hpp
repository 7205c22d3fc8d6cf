#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpkd/synth_data.hpp"
#include "mmpkd/teacher.hpp"
#include "mmpkd/tensor.hpp"
#include "mmpkd/vit.hpp"

namespace mmpkd::distill {

enum class Mode { Baseline, Mmpkd };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct DistillConfig {
    Mode mode = Mode::Baseline;
    double lambda = 0.5;       // ignored for baseline
    double temperature = 2.0;  // ignored for baseline
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t patience = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

// Baseline writes lambda/temperature as null.
void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

// (1 - lambda) * BCE(p, y) + lambda * BCE(p, s), batch mean. p has shape (n,).
nn::Tensor compute_distill_loss(std::span<const double> hard, std::span<const double> soft, const nn::Tensor& p,
                                double lambda);

class NanLossError : public std::runtime_error {
public:
    NanLossError(std::size_t epoch, std::size_t step, double value);
    std::size_t epoch;
    std::size_t step;
};

struct TrainResult {
    student::StudentViT model;  // weights of the best validation epoch
    DistillConfig config;
    student::VitConfig architecture;
    std::vector<double> train_loss;  // per epoch, objective being minimized
    std::vector<double> val_loss;    // per epoch, hard-label BCE on val
    std::optional<double> val_auroc;  // predictive AUROC of the returned model
    std::size_t best_epoch = 0;       // 1-based
    std::size_t epochs_run = 0;
    bool stopped_early = false;
};

void to_json(nlohmann::json& j, const TrainResult& r);  // metrics sidecar (no weights)

struct EpochEvent {
    std::size_t epoch;
    double train_loss;
    double val_loss;
};
using EpochCallback = std::function<void(const EpochEvent&)>;

// mode == Mmpkd requires a frozen teacher; its privileged features are used
// only to build soft labels. The student sees images only.
TrainResult train_student(const data::Dataset& ds, const teacher::TeacherModel* teacher, const DistillConfig& cfg,
                          const student::VitConfig& arch, const EpochCallback& on_epoch = {});

// Predicted probabilities over a split, batched.
std::vector<double> predict(const student::StudentViT& model, const std::vector<data::Sample>& samples,
                            std::size_t batch_size = 64);

struct GridCell {
    double lambda = 0.0;
    double temperature = 1.0;
    std::vector<double> val_aurocs;  // one per seed
    double mean = 0.0;
    std::optional<double> std;
};

struct GridResult {
    std::vector<GridCell> table;  // lambda-major, in grid order
    std::size_t best = 0;         // index into table
};

// Returns the validation AUROC of one (lambda, T, seed) cell.
using CellEvaluator = std::function<double(double lambda, double temperature, std::uint64_t seed)>;

GridResult grid_search(std::span<const double> lambdas, std::span<const double> temperatures,
                       std::span<const std::uint64_t> seeds, const CellEvaluator& evaluate);

// Convenience: cells are real training runs.
GridResult grid_search(const data::Dataset& ds, const teacher::TeacherModel& teacher, std::span<const double> lambdas,
                       std::span<const double> temperatures, std::span<const std::uint64_t> seeds,
                       const DistillConfig& base, const student::VitConfig& arch);

void to_json(nlohmann::json& j, const GridResult& g);

}  // namespace mmpkd::distill
