#pragma once

#include <string>
#include <vector>

#include "dmvfc/autodiff.hpp"

namespace dmvfc {

// Step-decay schedule: lr0 * decay^floor(epoch / interval). interval == 0
// gives a constant rate.
struct LrSchedule {
    double lr0 = 3e-3;
    double decay = 0.1;
    int interval = 200;

    static LrSchedule pretraining() { return {3e-3, 0.1, 200}; }
    static LrSchedule finetuning() { return {1e-5, 1.0, 0}; }
};

double lr_at_epoch(const LrSchedule& schedule, int epoch);

struct AdamState {
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<ad::Matrix> m;
    std::vector<ad::Matrix> v;
};

class Adam {
public:
    Adam(std::vector<ad::Var> params, std::vector<std::string> names);

    // Applies one bias-corrected update from the parameters' accumulated
    // gradients (missing gradients count as zero). Throws NumericalError
    // naming the first parameter with a non-finite gradient; no parameter is
    // modified in that case.
    void step(double lr);
    void zero_grad();

    const AdamState& state() const { return state_; }
    const std::vector<ad::Var>& params() const { return params_; }

private:
    std::vector<ad::Var> params_;
    std::vector<std::string> names_;
    AdamState state_;
};

}  // namespace dmvfc
