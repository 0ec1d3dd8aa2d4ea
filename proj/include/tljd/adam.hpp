#pragma once

#include "tljd/errors.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

namespace tljd {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamState {
public:
    AdamState() = default;

    static AdamState init(const ParamStore& store, AdamHyper hyper = {})
    {
        AdamState s;
        s.hyper_ = hyper;
        for (const auto& name : store.names()) {
            const Shape& shape = store.value(name).shape();
            s.moments_.emplace(name, Moments{Tensor(shape, 0.0), Tensor(shape, 0.0)});
        }
        s.initialized_ = true;
        return s;
    }

    [[nodiscard]] bool initialized() const noexcept { return initialized_; }
    [[nodiscard]] std::uint64_t step() const noexcept { return t_; }
    [[nodiscard]] const AdamHyper& hyper() const noexcept { return hyper_; }

    const Tensor& first_moment(const std::string& name) const { return moments(name).m; }
    const Tensor& second_moment(const std::string& name) const { return moments(name).v; }

private:
    friend void adam_step(ParamStore& params, AdamState& state);

    struct Moments {
        Tensor m;
        Tensor v;
    };

    const Moments& moments(const std::string& name) const
    {
        auto it = moments_.find(name);
        if (it == moments_.end())
            throw StateError("no Adam state for parameter '" + name + "'");
        return it->second;
    }

    AdamHyper hyper_;
    std::map<std::string, Moments> moments_;
    std::uint64_t t_ = 0;
    bool initialized_ = false;
};

/// One bias-corrected Adam update using the step-size form
///   lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t),  w -= lr_t * m / (sqrt(v) + eps).
inline void adam_step(ParamStore& params, AdamState& state)
{
    if (!state.initialized_)
        throw StateError("adam_step: optimizer state was never initialized");
    for (const auto& name : params.names())
        if (!state.moments_.contains(name))
            throw StateError("adam_step: missing optimizer state for parameter '" + name + "'");

    state.t_ += 1;
    const auto& h = state.hyper_;
    const double t = static_cast<double>(state.t_);
    const double lr_t = h.lr * std::sqrt(1.0 - std::pow(h.beta2, t)) / (1.0 - std::pow(h.beta1, t));
    for (const auto& name : params.names()) {
        ParamEntry& e = params.entry(name);
        auto& mom = state.moments_.at(name);
        auto w = e.value.data();
        auto g = e.grad.data();
        auto m = mom.m.data();
        auto v = mom.v.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + h.eps);
        }
    }
}

} // namespace tljd
