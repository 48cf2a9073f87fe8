#include "dmvfc/optim.hpp"

#include <cmath>

#include "dmvfc/error.hpp"

namespace dmvfc {

double lr_at_epoch(const LrSchedule& s, int epoch) {
    if (epoch < 0) throw ConfigError("lr_at_epoch: epoch must be non-negative");
    if (s.interval <= 0) return s.lr0;
    return s.lr0 * std::pow(s.decay, epoch / s.interval);
}

Adam::Adam(std::vector<ad::Var> params, std::vector<std::string> names)
    : params_(std::move(params)), names_(std::move(names)) {
    if (names_.size() != params_.size()) throw ShapeMismatch("Adam: one name per parameter required");
    for (const auto& p : params_) {
        state_.m.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
        state_.v.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
    }
}

void Adam::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& p = params_[i];
        if (!p.has_grad()) continue;
        if (p.grad().rows() != p.rows() || p.grad().cols() != p.cols())
            throw ShapeMismatch("Adam: gradient shape differs for " + names_[i]);
        if (!p.grad().allFinite()) throw NumericalError("Adam: non-finite gradient in parameter " + names_[i]);
    }
    ++state_.step;
    const double b1 = state_.beta1, b2 = state_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        if (p.has_grad()) {
            m = b1 * m + (1.0 - b1) * p.grad();
            v = b2 * v + (1.0 - b2) * p.grad().cwiseAbs2();
        } else {
            m *= b1;
            v *= b2;
        }
        const double eps = state_.eps;
        p.mutable_value().array() -=
            lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace dmvfc
