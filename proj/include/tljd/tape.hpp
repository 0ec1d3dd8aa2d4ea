#pragma once

#include "tljd/errors.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tljd {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] std::size_t rows() const { return value().rows(); }
    [[nodiscard]] std::size_t cols() const { return value().cols(); }
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode recording of a computation.
///
/// A tape either records backward closures (training, gradient checks) or
/// only evaluates values (inference). Parameter leaves reference the values
/// held by the ParamStore directly; the store must not be modified while a
/// tape that reads it is alive.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(ParamStore* store = nullptr, bool record = true) : store_(store), record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] bool recording() const noexcept { return record_; }

    Var constant(Tensor value)
    {
        nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false, {}});
        return Var(this, nodes_.size() - 1);
    }

    /// Leaf bound to a named parameter of the attached store. Repeated calls
    /// with the same name return the same leaf.
    Var param(const std::string& name)
    {
        if (store_ == nullptr)
            throw ConfigError("tape has no parameter store attached (requested '" + name + "')");
        if (auto it = param_ids_.find(name); it != param_ids_.end())
            return Var(this, it->second);
        const Tensor& v = store_->value(name);
        nodes_.push_back(Node{{}, &v, {}, {}, record_, name});
        param_ids_.emplace(name, nodes_.size() - 1);
        return Var(this, nodes_.size() - 1);
    }

    /// Records the result of a primitive. `inputs_need_grad` tells whether any
    /// input requires a gradient; when false (or when not recording) the
    /// backward closure is dropped.
    Var push(Tensor value, bool inputs_need_grad, Backward backward)
    {
        const bool needs = record_ && inputs_need_grad;
        nodes_.push_back(Node{std::move(value), nullptr, {}, needs ? std::move(backward) : Backward{}, needs, {}});
        return Var(this, nodes_.size() - 1);
    }

    [[nodiscard]] const Tensor& value(std::size_t id) const
    {
        const Node& n = nodes_[id];
        return n.ref != nullptr ? *n.ref : n.value;
    }

    [[nodiscard]] bool needs_grad(std::size_t id) const noexcept { return nodes_[id].needs_grad; }

    /// Gradient buffer of a node, allocated on first access.
    Tensor& grad(std::size_t id)
    {
        Node& n = nodes_[id];
        if (n.grad.empty())
            n.grad = Tensor(value(id).shape(), 0.0);
        return n.grad;
    }

    [[nodiscard]] bool has_grad(std::size_t id) const noexcept { return !nodes_[id].grad.empty(); }

    /// Back-propagates from a scalar output and adds the resulting parameter
    /// gradients into the attached store.
    void backward(Var output)
    {
        if (!record_)
            throw StateError("backward() called on a tape that does not record");
        if (output.tape_ != this)
            throw StateError("backward() called with a value from another tape");
        if (value(output.id_).size() != 1)
            throw ShapeError("backward() requires a scalar output, got " + shape_to_string(value(output.id_).shape()));
        grad(output.id_).fill(1.0);
        for (std::size_t id = output.id_ + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.empty())
                continue;
            if (n.backward)
                n.backward(*this, id);
        }
        for (const auto& [name, id] : param_ids_) {
            const Node& n = nodes_[id];
            if (n.grad.empty())
                continue;
            Tensor& g = store_->grad(name);
            auto src = n.grad.data();
            auto dst = g.data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] += src[i];
        }
    }

    /// Enables recording of relu activation patterns, used by the gradient
    /// checker to detect perturbations that cross a kink.
    void track_kinks(bool on) noexcept { track_kinks_ = on; }
    void note_relu(const Tensor& x)
    {
        if (!track_kinks_)
            return;
        for (double v : x.data())
            kink_signature_.push_back(v > 0.0);
    }
    [[nodiscard]] const std::vector<bool>& kink_signature() const noexcept { return kink_signature_; }

    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Drops every node recorded after `mark` (a previous node_count()).
    /// Only valid when no later computation refers to the dropped nodes.
    void rewind(std::size_t mark)
    {
        if (record_)
            throw StateError("rewind() is only available on tapes that do not record");
        while (nodes_.size() > mark)
            nodes_.pop_back();
        std::erase_if(param_ids_, [mark](const auto& kv) { return kv.second >= mark; });
    }
    [[nodiscard]] ParamStore* store() const noexcept { return store_; }

private:
    struct Node {
        Tensor value;
        const Tensor* ref;
        Tensor grad;
        Backward backward;
        bool needs_grad;
        std::string param_name;
    };

    ParamStore* store_;
    bool record_;
    bool track_kinks_ = false;
    std::deque<Node> nodes_;
    std::unordered_map<std::string, std::size_t> param_ids_;
    std::vector<bool> kink_signature_;
};

inline const Tensor& Var::value() const
{
    return tape_->value(id_);
}

using GraphFn = std::function<Var(Tape&)>;

/// Evaluates `fn` on a fresh tape, then fills `store` gradients with the exact
/// reverse-mode derivative of the returned scalar.
inline double forward_backward(ParamStore& store, const GraphFn& fn)
{
    store.zero_grads();
    Tape tape(&store, true);
    Var loss = fn(tape);
    if (loss.value().size() != 1)
        throw ShapeError("forward_backward: graph must return a scalar, got " + shape_to_string(loss.value().shape()));
    tape.backward(loss);
    return loss.value().item();
}

/// Forward-only evaluation of a scalar graph.
inline double evaluate_graph(ParamStore& store, const GraphFn& fn)
{
    Tape tape(&store, false);
    return fn(tape).value().item();
}

} // namespace tljd
