#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mmpkd::teacher {

enum class Variant { Logistic, Forest };
std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct LogisticParams {
    double learning_rate = 0.05;
    int max_epochs = 2000;
    int patience = 5;
    double min_improvement = 1e-7;
};

struct ForestParams {
    int n_trees = 50;
    int max_depth = 6;
    int min_samples_leaf = 2;
    int max_features = 0;  // 0 -> round(sqrt(d))
};

struct Hyperparams {
    LogisticParams logistic;
    ForestParams forest;
};

void to_json(nlohmann::json& j, const Hyperparams& h);
void from_json(const nlohmann::json& j, Hyperparams& h);

// CART node. Internal when feature >= 0: go left when x[feature] <= threshold.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double prob = 0.0;  // class-1 frequency at a leaf
    bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    double predict(std::span<const double> x) const;
    bool operator==(const DecisionTree&) const = default;
};

class NotFrozenError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Privileged-modality teacher. Parameters are only settable through the
// factories; once frozen the model is read-only.
class TeacherModel {
public:
    static TeacherModel logistic(std::vector<double> weights, double bias);
    static TeacherModel forest(std::vector<DecisionTree> trees, std::size_t input_dim);

    TeacherModel& freeze() {
        frozen_ = true;
        return *this;
    }
    bool frozen() const { return frozen_; }
    Variant variant() const { return variant_; }
    std::size_t input_dim() const { return input_dim_; }
    const std::vector<double>& weights() const { return weights_; }
    double bias() const { return bias_; }
    const std::vector<DecisionTree>& trees() const { return trees_; }

    // Mean of per-tree leaf frequencies (forest) or sigmoid of the affine score.
    double probability(std::span<const double> x) const;

    // Canonical serialized parameters; byte-compare to detect mutation.
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static TeacherModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static TeacherModel load(const std::filesystem::path& path);

private:
    TeacherModel() = default;
    void check_input(std::span<const double> x) const;

    Variant variant_ = Variant::Logistic;
    std::size_t input_dim_ = 0;
    std::vector<double> weights_;
    double bias_ = 0.0;
    std::vector<DecisionTree> trees_;
    bool frozen_ = false;
};

inline constexpr int kTeacherFormatVersion = 1;
inline constexpr double kForestProbClamp = 1e-6;

struct LabeledFeatures {
    const std::vector<std::vector<double>>* features = nullptr;
    const std::vector<int>* labels = nullptr;
};

// Trains on (x*, y) and returns the model frozen.
//
// Logistic: full-batch Adam on BCE, stopping when the monitored BCE
// (validation when given, else training) has not improved for `patience`
// epochs; the best epoch's parameters are kept. Forest: bagged CART trees with
// Gini impurity and per-node random feature subsets.
TeacherModel train_teacher(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                           Variant variant, const Hyperparams& hp, std::uint64_t seed,
                           std::optional<LabeledFeatures> validation = std::nullopt);

// f_t(x*): affine score (logistic) or clamped log-odds of the forest probability.
double teacher_logit(const TeacherModel& model, std::span<const double> x_star);

struct SoftLabel {
    double value = 0.5;
    double temperature = 1.0;
    double logit = 0.0;
};

SoftLabel soft_label(double logit, double temperature);
std::vector<SoftLabel> soft_labels(const TeacherModel& model, const std::vector<std::vector<double>>& features,
                                   double temperature);

}  // namespace mmpkd::teacher
