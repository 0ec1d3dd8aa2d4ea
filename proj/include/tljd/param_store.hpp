#pragma once

#include "tljd/errors.hpp"
#include "tljd/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace tljd {

struct ParamEntry {
    Tensor value;
    Tensor grad;
};

/// Named trainable parameters with matching gradient buffers.
///
/// Entries keep their insertion order, which is also the order used for
/// initialization draws and checkpoint payloads.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

    Tensor& add(const std::string& name, Tensor init)
    {
        if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos)
            throw ConfigError("invalid parameter name '" + name + "'");
        if (entries_.contains(name))
            throw ConfigError("duplicate parameter name '" + name + "'");
        Tensor grad(init.shape(), 0.0);
        auto [it, _] = entries_.emplace(name, ParamEntry{std::move(init), std::move(grad)});
        order_.push_back(name);
        return it->second.value;
    }

    /// Weight matrix drawn from U[-1/sqrt(fan_in), +1/sqrt(fan_in)].
    Tensor& add_uniform(const std::string& name, Shape shape, std::size_t fan_in)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(std::move(shape));
        for (double& v : t.data())
            v = dist(rng_);
        return add(name, std::move(t));
    }

    Tensor& add_constant(const std::string& name, Shape shape, double value)
    {
        return add(name, Tensor(std::move(shape), value));
    }

    [[nodiscard]] bool contains(const std::string& name) const { return entries_.contains(name); }

    ParamEntry& entry(const std::string& name)
    {
        auto it = entries_.find(name);
        if (it == entries_.end())
            throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const ParamEntry& entry(const std::string& name) const
    {
        auto it = entries_.find(name);
        if (it == entries_.end())
            throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& grad(const std::string& name) { return entry(name).grad; }
    const Tensor& grad(const std::string& name) const { return entry(name).grad; }

    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return order_; }
    [[nodiscard]] std::size_t size() const noexcept { return order_.size(); }

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_)
            n += e.value.size();
        return n;
    }

    void zero_grads()
    {
        for (auto& [_, e] : entries_)
            e.grad.fill(0.0);
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    std::mt19937_64& rng() noexcept { return rng_; }

    /// Copies values from another store with the same names and shapes.
    void assign_values(const ParamStore& other)
    {
        if (other.order_ != order_)
            throw ConfigError("parameter stores have different layouts");
        for (const auto& name : order_) {
            const Tensor& src = other.value(name);
            Tensor& dst = value(name);
            if (src.shape() != dst.shape())
                throw ShapeError("parameter '" + name + "' shape " + shape_to_string(src.shape()) + " vs " +
                                 shape_to_string(dst.shape()));
            dst = src;
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::map<std::string, ParamEntry> entries_;
    std::vector<std::string> order_;
};

} // namespace tljd
