#include "mmpkd/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mmpkd::nn {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].numel(), 0.0);
        v_[i].assign(params_[i].numel(), 0.0);
    }
}

void Adam::step() {
    for (const auto& p : params_) {
        if (!p.has_grad()) {
            const std::string label = p.name().empty() ? std::string("<unnamed>") : p.name();
            throw std::invalid_argument("Adam: parameter '" + label + "' has no gradient");
        }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto w = p.mutable_data();
        auto g = p.mutable_grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
        std::fill(g.begin(), g.end(), 0.0);
    }
}

double finite_difference_check(const ScalarFn& f, const Tensor& x, double step) {
    if (!(step >= 1e-7 && step <= 1e-3)) throw std::invalid_argument("finite_difference_check: step outside [1e-7, 1e-3]");
    auto leaf = Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    const auto eval = [&](const Tensor& in) {
        const Tensor out = f(in);
        if (out.numel() != 1) throw ShapeError("finite_difference_check: f must be scalar, got " + shape_str(out.shape()));
        const double v = out.item();
        if (!std::isfinite(v)) throw std::domain_error("finite_difference_check: f(x) is not finite");
        return v;
    };
    const Tensor out = f(leaf);
    if (out.numel() != 1) throw ShapeError("finite_difference_check: f must be scalar, got " + shape_str(out.shape()));
    if (!std::isfinite(out.item())) throw std::domain_error("finite_difference_check: f(x) is not finite");
    out.backward();
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    std::vector<double> probe(x.data().begin(), x.data().end());
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = eval(Tensor::from_data(x.shape(), probe));
        probe[i] = orig - step;
        const double down = eval(Tensor::from_data(x.shape(), probe));
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * step);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    return worst;
}

}  // namespace mmpkd::nn
