#pragma once

#include "tljd/errors.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>

namespace tljd {

struct MetricsReport {
    std::optional<double> r2; ///< empty when the targets have zero variance
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t n = 0;
    std::string split;

    [[nodiscard]] double r2_value() const
    {
        if (!r2)
            throw MetricError("R^2 is undefined for " + (split.empty() ? std::string("these rows") : split) +
                              ": targets have zero variance");
        return *r2;
    }
};

/// R^2 = 1 - SS_res / SS_tot, RMSE and MAE over paired targets and predictions.
inline MetricsReport compute_metrics(std::span<const double> y, std::span<const double> y_hat, std::string split = {})
{
    if (y.empty())
        throw MetricError("cannot evaluate an empty set of rows");
    if (y.size() != y_hat.size())
        throw MetricError("metrics: " + std::to_string(y.size()) + " targets vs " + std::to_string(y_hat.size()) +
                          " predictions");
    const double n = static_cast<double>(y.size());
    double mean = 0.0;
    for (double v : y)
        mean += v;
    mean /= n;
    double ss_res = 0.0, ss_tot = 0.0, abs_err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - y_hat[i];
        ss_res += e * e;
        abs_err += std::fabs(e);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    MetricsReport r;
    r.n = y.size();
    r.split = std::move(split);
    r.rmse = std::sqrt(ss_res / n);
    r.mae = abs_err / n;
    if (ss_tot > 0.0)
        r.r2 = 1.0 - ss_res / ss_tot;
    return r;
}

} // namespace tljd
