#include "mmpkd/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mmpkd/optim.hpp"
#include "mmpkd/rng.hpp"
#include "mmpkd/tensor.hpp"

namespace mmpkd::teacher {

using nlohmann::json;

std::string variant_name(Variant v) { return v == Variant::Logistic ? "logistic" : "forest"; }

Variant parse_variant(const std::string& s) {
    if (s == "logistic") return Variant::Logistic;
    if (s == "forest") return Variant::Forest;
    throw std::invalid_argument("unknown teacher variant '" + s + "' (expected logistic or forest)");
}

void to_json(json& j, const Hyperparams& h) {
    j = {{"logistic",
          {{"learning_rate", h.logistic.learning_rate},
           {"max_epochs", h.logistic.max_epochs},
           {"patience", h.logistic.patience},
           {"min_improvement", h.logistic.min_improvement}}},
         {"forest",
          {{"n_trees", h.forest.n_trees},
           {"max_depth", h.forest.max_depth},
           {"min_samples_leaf", h.forest.min_samples_leaf},
           {"max_features", h.forest.max_features}}}};
}

void from_json(const json& j, Hyperparams& h) {
    Hyperparams d;
    const json lg = j.value("logistic", json::object());
    h.logistic.learning_rate = lg.value("learning_rate", d.logistic.learning_rate);
    h.logistic.max_epochs = lg.value("max_epochs", d.logistic.max_epochs);
    h.logistic.patience = lg.value("patience", d.logistic.patience);
    h.logistic.min_improvement = lg.value("min_improvement", d.logistic.min_improvement);
    const json fr = j.value("forest", json::object());
    h.forest.n_trees = fr.value("n_trees", d.forest.n_trees);
    h.forest.max_depth = fr.value("max_depth", d.forest.max_depth);
    h.forest.min_samples_leaf = fr.value("min_samples_leaf", d.forest.min_samples_leaf);
    h.forest.max_features = fr.value("max_features", d.forest.max_features);
}

double DecisionTree::predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[i].prob;
}

TeacherModel TeacherModel::logistic(std::vector<double> weights, double bias) {
    TeacherModel m;
    m.variant_ = Variant::Logistic;
    m.input_dim_ = weights.size();
    m.weights_ = std::move(weights);
    m.bias_ = bias;
    return m;
}

TeacherModel TeacherModel::forest(std::vector<DecisionTree> trees, std::size_t input_dim) {
    if (trees.empty()) throw std::invalid_argument("forest teacher needs at least one tree");
    TeacherModel m;
    m.variant_ = Variant::Forest;
    m.input_dim_ = input_dim;
    m.trees_ = std::move(trees);
    return m;
}

void TeacherModel::check_input(std::span<const double> x) const {
    if (x.size() != input_dim_) {
        throw std::invalid_argument("teacher expects " + std::to_string(input_dim_) + " privileged features, got " +
                                    std::to_string(x.size()));
    }
}

double TeacherModel::probability(std::span<const double> x) const {
    check_input(x);
    if (variant_ == Variant::Logistic) {
        double z = bias_;
        for (std::size_t k = 0; k < x.size(); ++k) z += weights_[k] * x[k];
        return nn::sigmoid_scalar(z);
    }
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
}

json TeacherModel::to_json() const {
    json j;
    j["format"] = "mmpkd-teacher";
    j["version"] = kTeacherFormatVersion;
    j["variant"] = variant_name(variant_);
    j["input_dim"] = input_dim_;
    j["frozen"] = frozen_;
    if (variant_ == Variant::Logistic) {
        j["weights"] = weights_;
        j["bias"] = bias_;
    } else {
        json trees = json::array();
        for (const auto& t : trees_) {
            json nodes = json::array();
            for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.prob});
            trees.push_back(nodes);
        }
        j["trees"] = trees;
    }
    return j;
}

TeacherModel TeacherModel::from_json(const json& j) {
    if (j.value("format", "") != "mmpkd-teacher") throw std::runtime_error("not an mmpkd teacher file");
    const int version = j.value("version", -1);
    if (version != kTeacherFormatVersion) {
        throw std::runtime_error("unsupported teacher format version " + std::to_string(version));
    }
    const auto variant = parse_variant(j.at("variant").get<std::string>());
    const auto dim = j.at("input_dim").get<std::size_t>();
    TeacherModel m;
    if (variant == Variant::Logistic) {
        m = logistic(j.at("weights").get<std::vector<double>>(), j.at("bias").get<double>());
        if (m.input_dim_ != dim) throw std::runtime_error("teacher file: weight count does not match input_dim");
    } else {
        std::vector<DecisionTree> trees;
        for (const auto& jt : j.at("trees")) {
            DecisionTree t;
            for (const auto& n : jt) {
                t.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                                   n.at(4).get<double>()});
            }
            trees.push_back(std::move(t));
        }
        m = forest(std::move(trees), dim);
    }
    if (j.value("frozen", false)) m.freeze();
    return m;
}

std::string TeacherModel::fingerprint() const {
    json j = to_json();
    j.erase("frozen");
    return j.dump();
}

void TeacherModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write teacher file " + path.string());
    out << to_json().dump(1) << '\n';
}

TeacherModel TeacherModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open teacher file " + path.string());
    return from_json(json::parse(in));
}

namespace {

void check_training_set(const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
    if (x.empty() || x.size() != y.size()) throw std::invalid_argument("teacher: features and labels must be non-empty and aligned");
    const std::size_t d = x.front().size();
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i].size() != d) throw std::invalid_argument("teacher: ragged feature matrix at row " + std::to_string(i));
        if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("teacher: labels must be 0/1");
        (y[i] ? has1 : has0) = true;
    }
    if (!(has0 && has1)) throw std::invalid_argument("teacher: training labels contain a single class");
}

nn::Tensor to_tensor(const std::vector<std::vector<double>>& x) {
    const std::size_t n = x.size(), d = x.front().size();
    std::vector<double> flat;
    flat.reserve(n * d);
    for (const auto& row : x) flat.insert(flat.end(), row.begin(), row.end());
    return nn::Tensor::from_data({n, d}, std::move(flat));
}

nn::Tensor labels_tensor(const std::vector<int>& y) {
    std::vector<double> v(y.begin(), y.end());
    return nn::Tensor::from_data({y.size(), 1}, std::move(v));
}

TeacherModel train_logistic(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                            const LogisticParams& p, std::uint64_t seed, std::optional<LabeledFeatures> val) {
    const std::size_t d = x.front().size();
    Rng rng = Rng::derive(seed, "teacher/logistic-init");
    std::vector<double> w0(d);
    for (auto& v : w0) v = rng.truncated_normal(0.01);
    auto w = nn::Tensor::from_data({d, 1}, std::move(w0), true, "teacher.weight");
    auto b = nn::Tensor::from_data({1}, {0.0}, true, "teacher.bias");
    const auto X = to_tensor(x);
    const auto Y = labels_tensor(y);
    std::optional<nn::Tensor> Xv, Yv;
    if (val) {
        check_training_set(*val->features, *val->labels);
        Xv = to_tensor(*val->features);
        Yv = labels_tensor(*val->labels);
    }
    nn::Adam opt({w, b}, nn::AdamConfig{p.learning_rate});
    const auto loss_on = [&](const nn::Tensor& xs, const nn::Tensor& ys) {
        return nn::binary_cross_entropy(nn::sigmoid(nn::add(nn::matmul(xs, w), b)), ys);
    };

    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_w(w.data().begin(), w.data().end());
    double best_b = b.at(0);
    int stale = 0;
    for (int epoch = 0; epoch < p.max_epochs; ++epoch) {
        loss_on(X, Y).backward();
        opt.step();
        const double monitored = Xv ? loss_on(*Xv, *Yv).item() : loss_on(X, Y).item();
        if (monitored < best - p.min_improvement) {
            best = monitored;
            best_w.assign(w.data().begin(), w.data().end());
            best_b = b.at(0);
            stale = 0;
        } else if (++stale >= p.patience) {
            break;
        }
    }
    return TeacherModel::logistic(std::move(best_w), best_b).freeze();
}

double gini(double pos, double total) {
    if (total <= 0.0) return 0.0;
    const double p = pos / total;
    return 2.0 * p * (1.0 - p);
}

class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<int>& y, const ForestParams& p, Rng& rng)
        : x_(x), y_(y), p_(p), rng_(rng), d_(x.front().size()) {
        max_features_ = p.max_features > 0 ? static_cast<std::size_t>(p.max_features)
                                           : static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d_))));
        max_features_ = std::clamp<std::size_t>(max_features_, 1, d_);
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        tree_ = {};
        grow(rows, 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<std::size_t>& rows, int depth) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double pos = 0.0;
        for (auto r : rows) pos += y_[r];
        const double total = static_cast<double>(rows.size());
        tree_.nodes[id].prob = pos / total;
        const bool pure = pos == 0.0 || pos == total;
        if (pure || depth >= p_.max_depth || rows.size() < 2 * static_cast<std::size_t>(p_.min_samples_leaf)) return id;

        std::vector<std::size_t> feats(d_);
        std::iota(feats.begin(), feats.end(), 0);
        rng_.shuffle(feats);
        feats.resize(max_features_);
        std::sort(feats.begin(), feats.end());

        const double parent_impurity = gini(pos, total);
        double best_gain = 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;
        std::vector<std::pair<double, int>> vals(rows.size());
        for (auto f : feats) {
            for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = {x_[rows[i]][f], y_[rows[i]]};
            std::sort(vals.begin(), vals.end());
            double left_pos = 0.0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                left_pos += vals[i].second;
                if (vals[i].first == vals[i + 1].first) continue;
                const double nl = static_cast<double>(i + 1), nr = total - nl;
                if (nl < p_.min_samples_leaf || nr < p_.min_samples_leaf) continue;
                const double impurity = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / total;
                const double gain = parent_impurity - impurity;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left, right;
        for (auto r : rows) (x_[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        auto& node = tree_.nodes[id];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    const std::vector<std::vector<double>>& x_;
    const std::vector<int>& y_;
    const ForestParams& p_;
    Rng& rng_;
    std::size_t d_;
    std::size_t max_features_ = 1;
    DecisionTree tree_;
};

TeacherModel train_forest(const std::vector<std::vector<double>>& x, const std::vector<int>& y, const ForestParams& p,
                          std::uint64_t seed) {
    if (p.n_trees < 1 || p.max_depth < 1 || p.min_samples_leaf < 1) {
        throw std::invalid_argument("forest: n_trees, max_depth and min_samples_leaf must be >= 1");
    }
    Rng rng = Rng::derive(seed, "teacher/forest");
    TreeBuilder builder(x, y, p, rng);
    std::vector<DecisionTree> trees;
    const auto n = static_cast<std::int64_t>(x.size());
    for (int t = 0; t < p.n_trees; ++t) {
        std::vector<std::size_t> rows(x.size());
        for (auto& r : rows) r = static_cast<std::size_t>(rng.integer(0, n - 1));
        trees.push_back(builder.build(std::move(rows)));
    }
    return TeacherModel::forest(std::move(trees), x.front().size()).freeze();
}

}  // namespace

TeacherModel train_teacher(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                           Variant variant, const Hyperparams& hp, std::uint64_t seed,
                           std::optional<LabeledFeatures> validation) {
    check_training_set(features, labels);
    if (variant == Variant::Logistic) return train_logistic(features, labels, hp.logistic, seed, validation);
    return train_forest(features, labels, hp.forest, seed);
}

double teacher_logit(const TeacherModel& model, std::span<const double> x_star) {
    if (!model.frozen()) throw NotFrozenError("teacher must be frozen before producing logits");
    if (model.variant() == Variant::Logistic) {
        if (x_star.size() != model.input_dim()) {
            throw std::invalid_argument("teacher expects " + std::to_string(model.input_dim()) +
                                        " privileged features, got " + std::to_string(x_star.size()));
        }
        double z = model.bias();
        for (std::size_t k = 0; k < x_star.size(); ++k) z += model.weights()[k] * x_star[k];
        return z;
    }
    const double p = std::clamp(model.probability(x_star), kForestProbClamp, 1.0 - kForestProbClamp);
    return std::log(p / (1.0 - p));
}

SoftLabel soft_label(double logit, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw std::invalid_argument("soft label temperature must be positive, got " + std::to_string(temperature));
    }
    return {nn::sigmoid_scalar(logit / temperature), temperature, logit};
}

std::vector<SoftLabel> soft_labels(const TeacherModel& model, const std::vector<std::vector<double>>& features,
                                   double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("soft label temperature must be positive, got " + std::to_string(temperature));
    }
    std::vector<SoftLabel> out;
    out.reserve(features.size());
    for (const auto& x : features) out.push_back(soft_label(teacher_logit(model, x), temperature));
    return out;
}

}  // namespace mmpkd::teacher
