#pragma once

#include "tljd/attention.hpp"
#include "tljd/dataset.hpp"
#include "tljd/errors.hpp"
#include "tljd/ops.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tape.hpp"

#include <array>
#include <string>
#include <vector>

namespace tljd {

inline const char* type_key(IndicatorType t)
{
    switch (t) {
    case IndicatorType::PJ: return "pj";
    case IndicatorType::DJ: return "dj";
    case IndicatorType::JE: return "je";
    case IndicatorType::JC: return "jc";
    }
    return "?";
}

/// Column indices of each indicator type, in canonical order.
struct TypePartition {
    std::array<std::vector<std::size_t>, 4> columns;

    static TypePartition from_schema(const std::vector<IndicatorColumn>& schema)
    {
        TypePartition p;
        for (std::size_t j = 0; j < schema.size(); ++j)
            p.columns[static_cast<std::size_t>(schema[j].type)].push_back(j);
        p.validate(schema.size());
        return p;
    }

    [[nodiscard]] std::size_t count(IndicatorType t) const { return columns[static_cast<std::size_t>(t)].size(); }

    /// The four lists must be non-empty and partition {0..K-1}.
    void validate(std::size_t K) const
    {
        std::vector<int> seen(K, 0);
        for (auto t : kIndicatorTypes) {
            const auto& cols = columns[static_cast<std::size_t>(t)];
            if (cols.empty())
                throw ConfigError(std::string("type partition: ") + to_string(t) + " has no indicators");
            for (std::size_t j : cols) {
                if (j >= K)
                    throw ConfigError("type partition: column " + std::to_string(j) + " out of range for K=" +
                                      std::to_string(K));
                if (seen[j]++)
                    throw ConfigError("type partition: column " + std::to_string(j) + " assigned twice");
            }
        }
        for (std::size_t j = 0; j < K; ++j)
            if (!seen[j])
                throw ConfigError("type partition: column " + std::to_string(j) + " has no type");
    }
};

/// Splits E (K+1 x d) into one (N_t+1) x d block per type, each starting with the CLS row.
inline std::array<Var, 4> combine_features(const Var& e, const TypePartition& partition)
{
    const std::size_t K = e.rows() - 1;
    partition.validate(K);
    std::array<Var, 4> blocks;
    for (std::size_t t = 0; t < 4; ++t) {
        std::vector<std::size_t> rows{0};
        for (std::size_t j : partition.columns[t])
            rows.push_back(j + 1);
        blocks[t] = gather_rows(e, std::move(rows));
    }
    return blocks;
}

/// LayerNorm -> relu -> affine head producing a scalar from a d-vector.
inline void init_prediction_head(ParamStore& store, const std::string& prefix, std::size_t d)
{
    store.add_constant(prefix + ".ln.gain", {1, d}, 1.0);
    store.add_constant(prefix + ".ln.bias", {1, d}, 0.0);
    store.add_uniform(prefix + ".w", {d, 1}, d);
    store.add_constant(prefix + ".b", {1, 1}, 0.0);
}

struct PredictionHead {
    Var ln_gain, ln_bias, w, b;
    double ln_eps = 1e-5;

    static PredictionHead bind(Tape& tape, const std::string& prefix, double ln_eps)
    {
        return {tape.param(prefix + ".ln.gain"), tape.param(prefix + ".ln.bias"), tape.param(prefix + ".w"),
                tape.param(prefix + ".b"), ln_eps};
    }
};

inline Var head_predict(const Var& cls_row, const PredictionHead& head)
{
    Var normed = relu(layer_norm(cls_row, head.ln_gain, head.ln_bias, head.ln_eps));
    return add(matmul(normed, head.w), head.b);
}

struct Expert {
    AttentionLayer layer;
    PredictionHead head;
};

inline std::string expert_prefix(IndicatorType t)
{
    return std::string("expert.") + type_key(t);
}

inline void init_expert(ParamStore& store, IndicatorType t, const AttentionShape& shape)
{
    const std::string prefix = expert_prefix(t);
    init_attention_layer(store, prefix + ".layer", shape);
    init_prediction_head(store, prefix + ".head", shape.d);
}

inline Expert bind_expert(Tape& tape, IndicatorType t, const AttentionShape& shape)
{
    const std::string prefix = expert_prefix(t);
    return {AttentionLayer::bind(tape, prefix + ".layer", shape), PredictionHead::bind(tape, prefix + ".head", shape.ln_eps)};
}

/// Runs the expert's transformer layer over its block and predicts from the output CLS row.
inline Var expert_predict(const Var& block, const Expert& expert)
{
    if (block.rows() != expert.layer.shape.tokens)
        throw ShapeError("expert_predict: block has " + std::to_string(block.rows()) + " tokens, expert expects " +
                         std::to_string(expert.layer.shape.tokens));
    Var out = transformer_layer(block, expert.layer);
    return head_predict(slice_rows(out, 0, 1), expert.head);
}

inline void init_gate(ParamStore& store, std::size_t d)
{
    store.add_uniform("gate.w", {d, 4}, d);
    store.add_constant("gate.b", {1, 4}, 0.0);
}

struct Gate {
    Var w, b;

    static Gate bind(Tape& tape) { return {tape.param("gate.w"), tape.param("gate.b")}; }
};

/// Softmax over the four expert logits, in (PJ, DJ, JE, JC) order.
inline Var gate(const Var& e_cls, const Gate& g)
{
    return softmax(add_row_bias(matmul(e_cls, g.w), g.b), 1);
}

} // namespace tljd
