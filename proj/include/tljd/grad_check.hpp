#pragma once

#include "tljd/errors.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tape.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace tljd {

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0; ///< coordinates whose perturbation crossed a relu kink
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t excluded = 0;

    [[nodiscard]] bool passed() const noexcept { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
    double step = 1e-5;
};

/// Compares reverse-mode gradients against central finite differences,
/// reporting max |analytic - numeric| / max(1, |numeric|) per parameter.
/// Coordinates whose +h and -h evaluations produce different relu activation
/// patterns sit at (or straddle) a kink and are excluded rather than scored.
inline GradCheckReport grad_check(const GraphFn& fn, ParamStore& params, double tolerance,
                                  GradCheckOptions options = {})
{
    auto eval = [&](std::vector<bool>* signature) {
        Tape tape(&params, false);
        tape.track_kinks(signature != nullptr);
        const double v = fn(tape).value().item();
        if (signature != nullptr)
            *signature = tape.kink_signature();
        return v;
    };

    const double loss = forward_backward(params, fn);
    const double again = eval(nullptr);
    if (std::bit_cast<std::uint64_t>(loss) != std::bit_cast<std::uint64_t>(again))
        throw DeterminismError("grad_check: two forward passes disagree (" + std::to_string(loss) + " vs " +
                               std::to_string(again) + ")");

    GradCheckReport report;
    report.tolerance = tolerance;
    const double h = options.step;
    std::vector<bool> sig_plus, sig_minus;
    for (const auto& name : params.names()) {
        ParamCheck pc;
        pc.name = name;
        const Tensor analytic = params.grad(name);
        const std::size_t n = params.value(name).size();
        for (std::size_t i = 0; i < n; ++i) {
            double& w = params.value(name)[i];
            const double saved = w;
            w = saved + h;
            const double f_plus = eval(&sig_plus);
            w = saved - h;
            const double f_minus = eval(&sig_minus);
            w = saved;
            if (sig_plus != sig_minus) {
                ++pc.excluded;
                continue;
            }
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
            if (!std::isfinite(err))
                err = std::numeric_limits<double>::infinity();
            pc.max_rel_error = std::max(pc.max_rel_error, err);
            ++pc.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
        report.excluded += pc.excluded;
        report.params.push_back(std::move(pc));
    }
    return report;
}

} // namespace tljd
