#pragma once

// Finite-difference verification of every analytic gradient: the center
// classifier gradient, the feature gradient through center pooling, the
// pixel cross-entropy and the end-to-end perceptron parameters.

#include <cstdint>
#include <string>
#include <vector>

namespace ceco {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-6;

// Mutation hooks for checking that the checker itself can fail.
enum class GradFault { none, flip_center_feature_sign };

struct GradSuiteResult {
    std::string name;
    int trials = 0;
    double worst_relative_error = 0.0;
    std::uint64_t worst_seed = 0;
    bool passed = false;
};

struct GradCheckSummary {
    std::vector<GradSuiteResult> suites;

    bool passed() const;
};

// max |a - n| / max(max |a|, max |n|, 1e-8) over all entries.
double max_relative_error(const double* analytic, const double* numeric, std::size_t count);

// Instance t of every suite is drawn from seed + t.
GradCheckSummary run_grad_checks(std::uint64_t seed, int trials, GradFault fault = GradFault::none);

} // namespace ceco
