#include "slm/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace slm {

namespace {

double eval_loss(const LossFn& loss) {
    Tape<double> tape(false);
    return loss(tape).item();
}

} // namespace

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << "max rel error " << max_rel_error << " (tol " << tolerance << ")";
    for (const auto& e : entries) {
        os << "\n  " << e.name << ": " << e.max_rel_error << " over " << e.coords_checked << " coords";
        if (e.max_rel_error >= tolerance)
            os << " [worst idx " << e.worst_index << " analytic " << e.analytic << " numeric " << e.numeric << "]";
    }
    return os.str();
}

GradCheckReport grad_check(const LossFn& loss, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options) {
    for (auto* p : params) p->zero_grad();
    {
        Tape<double> tape;
        Var<double> l = loss(tape);
        if (!std::isfinite(l.item())) throw std::domain_error("grad_check: non-finite loss at the base point");
        tape.backward(l);
    }
    GradCheckReport report;
    report.tolerance = options.tolerance;
    for (auto* p : params) {
        GradCheckEntry entry;
        entry.name = p->name;
        const std::size_t n = p->value.size();
        const std::size_t stride = options.max_coords == 0 ? 1 : std::max<std::size_t>(1, n / options.max_coords);
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = p->value[i];
            p->value[i] = orig + options.step;
            const double up = eval_loss(loss);
            p->value[i] = orig - options.step;
            const double down = eval_loss(loss);
            p->value[i] = orig;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw std::domain_error("grad_check: non-finite loss perturbing " + p->name + "[" + std::to_string(i) + "]");
            const double numeric = (up - down) / (2.0 * options.step);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), options.magnitude_floor});
            const double rel = std::abs(numeric - analytic) / denom;
            if (rel > entry.max_rel_error || entry.coords_checked == 0) {
                entry.max_rel_error = std::max(entry.max_rel_error, rel);
                entry.worst_index = i;
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
            ++entry.coords_checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(entry);
    }
    return report;
}

} // namespace slm
