#pragma once

#include "tljd/errors.hpp"
#include "tljd/ops.hpp"
#include "tljd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace tljd {

namespace detail {

inline void check_lambda(double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("loss weight lambda=" + std::to_string(lambda) + " is outside [0, 1]");
}

inline void check_gate_rows(const Tensor& gate)
{
    for (std::size_t i = 0; i < gate.rows(); ++i) {
        double s = 0.0;
        for (std::size_t t = 0; t < gate.cols(); ++t)
            s += gate(i, t);
        if (std::fabs(s - 1.0) > 1e-6)
            throw ContractError("expert responsibility loss: gate row " + std::to_string(i) + " sums to " +
                                std::to_string(s));
    }
}

} // namespace detail

/// Mean squared error, (1/N) sum (y_hat - y)^2. `y_hat` is N x 1.
inline Var loss_reg(const Var& y_hat, std::span<const double> y)
{
    if (y.empty())
        throw ShapeError("loss_reg: empty batch");
    if (y_hat.rows() != y.size() || y_hat.cols() != 1)
        throw ShapeError("loss_reg: predictions " + shape_to_string(y_hat.value().shape()) + " vs " +
                         std::to_string(y.size()) + " targets");
    Var target = y_hat.tape().constant(Tensor::column({y.begin(), y.end()}));
    return mean(square(sub(y_hat, target)));
}

/// Expert responsibility loss
///   -(1/N) sum_i log sum_t a_i^t exp(-(y_i - y_hat_i^t)^2 / 2),
/// evaluated in max-shifted log-sum-exp form.
/// `experts` and `gate` are N x E.
inline Var loss_er(const Var& experts, const Var& gate, std::span<const double> y)
{
    if (y.empty())
        throw ShapeError("loss_er: empty batch");
    const std::size_t n = y.size();
    if (experts.rows() != n || gate.rows() != n || experts.cols() != gate.cols())
        throw ShapeError("loss_er: experts " + shape_to_string(experts.value().shape()) + ", gate " +
                         shape_to_string(gate.value().shape()) + ", " + std::to_string(n) + " targets");
    detail::check_gate_rows(gate.value());
    const std::size_t e = experts.cols();
    Tensor rep = Tensor::matrix(n, e);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < e; ++t)
            rep(i, t) = y[i];
    Var target = experts.tape().constant(std::move(rep));
    Var exponent = scale(square(sub(target, experts)), -0.5);
    Var inner = log_weighted_mean_exp_rows(gate, exponent);
    return scale(mean(inner), -1.0);
}

/// (1 - lambda) * l_reg + lambda * l_er.
inline Var loss_joint(const Var& l_reg, const Var& l_er, double lambda)
{
    detail::check_lambda(lambda);
    return lerp_scalars(l_reg, 1.0 - lambda, l_er, lambda);
}

// Plain-value forms.

inline double loss_reg(std::span<const double> y_hat, std::span<const double> y)
{
    if (y.empty())
        throw ShapeError("loss_reg: empty batch");
    if (y_hat.size() != y.size())
        throw ShapeError("loss_reg: " + std::to_string(y_hat.size()) + " predictions vs " + std::to_string(y.size()) +
                         " targets");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        s += (y_hat[i] - y[i]) * (y_hat[i] - y[i]);
    return s / static_cast<double>(y.size());
}

/// `experts` and `gate` are row-major N x E.
inline double loss_er(const Tensor& experts, const Tensor& gate, std::span<const double> y)
{
    Tape tape;
    return loss_er(tape.constant(experts), tape.constant(gate), y).value().item();
}

inline double loss_joint(double l_reg, double l_er, double lambda)
{
    detail::check_lambda(lambda);
    return (1.0 - lambda) * l_reg + lambda * l_er;
}

} // namespace tljd
