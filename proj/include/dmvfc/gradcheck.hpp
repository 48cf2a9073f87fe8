#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmvfc/autodiff.hpp"

namespace dmvfc {

struct GradCheckOptions {
    double step = 1e-4;  // central difference half-width
    // Entries compared per parameter tensor; all of them when <= 0.
    int max_entries = 0;
    std::uint64_t seed = 0;  // picks the sampled entries
    // Gradients smaller than floor * max(1, |loss|) are compared absolutely,
    // below the resolution of a difference quotient of the loss.
    double floor = 1e-6;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst;   // "<param>[<index>]"
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int checked = 0;
    // Entries skipped because x - step or x + step lies on a different
    // smooth piece than x (a rectifier sign, max winner or neighbour set
    // changes inside the stencil).
    int non_smooth = 0;
};

// Compares the analytic gradient of `loss` (rebuilt on every call) with
// central differences, entry by entry. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, floor * max(1, |loss|)).
GradCheckResult check_gradients(const std::function<ad::Var()>& loss, const std::vector<ad::Var>& params,
                                const std::vector<std::string>& names, const GradCheckOptions& options = {});

struct GradSuiteEntry {
    std::string name;  // e.g. "geo/siamese"
    GradCheckResult result;
};

// Seeded random instances (random polylines, BOLD and FA, randomly perturbed
// encoder weights, random pairs, labels, centroids and targets). For each
// instance checks the Siamese loss and the fine-tuning loss of both encoders,
// gradients taken with respect to every encoder tensor and the centroids.
// Results are merged per loss over all instances.
std::vector<GradSuiteEntry> run_gradient_suite(int instances, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace dmvfc
