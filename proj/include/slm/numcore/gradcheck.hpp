#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slm/numcore/autodiff.hpp"

namespace slm {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-5;
    /// Gradients smaller than this are compared in absolute terms.
    double magnitude_floor = 1e-3;
    /// Coordinates probed per parameter, evenly strided; 0 probes all.
    std::size_t max_coords = 0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t coords_checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_rel_error < tolerance; }
    std::string summary() const;
};

/// Scalar loss builder: records the loss on the given tape from the current
/// parameter values.
using LossFn = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients with central differences. Throws
/// std::domain_error naming the parameter and coordinate if the loss becomes
/// non-finite.
GradCheckReport grad_check(const LossFn& loss, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

} // namespace slm
