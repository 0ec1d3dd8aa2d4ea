#pragma once

#include "tljd/attention.hpp"
#include "tljd/dataset.hpp"
#include "tljd/encoder.hpp"
#include "tljd/errors.hpp"
#include "tljd/moe.hpp"
#include "tljd/ops.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tape.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tljd {

enum class Ablation { full, wo_moe, wo_ce };

inline const char* to_string(Ablation a)
{
    switch (a) {
    case Ablation::full: return "full";
    case Ablation::wo_moe: return "wo_moe";
    case Ablation::wo_ce: return "wo_ce";
    }
    return "?";
}

inline Ablation parse_ablation(const std::string& s)
{
    if (s == "full")
        return Ablation::full;
    if (s == "wo_moe")
        return Ablation::wo_moe;
    if (s == "wo_ce")
        return Ablation::wo_ce;
    throw ConfigError("unknown ablation '" + s + "' (expected full, wo_moe or wo_ce)");
}

struct ModelConfig {
    std::size_t d = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_hidden = 0; ///< column-encoder MLP width; 0 means d
    std::size_t d_ff = 0;     ///< feed-forward width; 0 means 2d
    double ln_eps = 1e-5;
    Ablation ablation = Ablation::full;

    [[nodiscard]] std::size_t hidden_width() const { return d_hidden == 0 ? d : d_hidden; }
    [[nodiscard]] std::size_t ff_width() const { return d_ff == 0 ? 2 * d : d_ff; }

    void validate() const
    {
        if (d < 2)
            throw ConfigError("model: d must be at least 2");
        if (heads == 0 || d % heads != 0)
            throw ConfigError("model: d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    }
};

struct Prediction {
    double y_hat = 0.0;
    std::vector<double> gate;   ///< expert weights (PJ, DJ, JE, JC); a single 1.0 without MoE
    std::vector<double> expert; ///< per-expert predictions, same order
};

/// Row + column encoders, L arithmetic-attention layers, and either four
/// gated experts or (wo_moe) one transformer layer with a single head.
class TljdModel {
public:
    /// `train_columns` is K x N_train: row j holds the scaled training values of column j.
    TljdModel(ModelConfig config, std::vector<IndicatorColumn> schema, Tensor train_columns, std::uint64_t seed)
        : config_(config), schema_(std::move(schema)), partition_(TypePartition::from_schema(schema_)),
          train_columns_(std::move(train_columns)), params_(seed)
    {
        config_.validate();
        if (train_columns_.rows() != schema_.size())
            throw ShapeError("model: training column matrix " + shape_to_string(train_columns_.shape()) +
                             " does not have K=" + std::to_string(schema_.size()) + " rows");
        const std::size_t K = schema_.size();
        const std::size_t d = config_.d;
        init_row_encoder(params_, K, d);
        if (config_.ablation != Ablation::wo_ce)
            init_column_encoder(params_, n_train(), config_.hidden_width(), d);
        init_cls(params_, d);
        for (std::size_t l = 0; l < config_.layers; ++l)
            init_attention_layer(params_, "enc.layer" + std::to_string(l), layer_shape(K + 1));
        if (config_.ablation == Ablation::wo_moe) {
            init_attention_layer(params_, "single.layer", layer_shape(K + 1));
            init_prediction_head(params_, "single.head", d);
        } else {
            for (auto t : kIndicatorTypes)
                init_expert(params_, t, layer_shape(partition_.count(t) + 1));
            init_gate(params_, d);
        }
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] const std::vector<IndicatorColumn>& schema() const noexcept { return schema_; }
    [[nodiscard]] const TypePartition& partition() const noexcept { return partition_; }
    [[nodiscard]] const Tensor& train_columns() const noexcept { return train_columns_; }
    [[nodiscard]] std::size_t K() const noexcept { return schema_.size(); }
    [[nodiscard]] std::size_t n_train() const { return train_columns_.cols(); }
    [[nodiscard]] bool has_moe() const noexcept { return config_.ablation != Ablation::wo_moe; }
    [[nodiscard]] std::size_t expert_count() const noexcept { return has_moe() ? 4 : 1; }

    ParamStore& params() noexcept { return params_; }
    [[nodiscard]] const ParamStore& params() const noexcept { return params_; }

    [[nodiscard]] AttentionShape layer_shape(std::size_t tokens) const
    {
        return {tokens, config_.d, config_.heads, config_.ff_width(), config_.ln_eps};
    }

    /// Every parameter bound to a tape, plus the sample-independent column embeddings.
    struct Bound {
        RowEncoder row;
        Var column_embeddings; ///< K x d
        Var cls;
        std::vector<AttentionLayer> stack;
        std::array<Expert, 4> experts;
        Gate gate;
        std::optional<AttentionLayer> single_layer;
        std::optional<PredictionHead> single_head;
    };

    /// Per-sample outputs on the tape.
    struct Output {
        Var y_hat;    ///< 1 x 1
        Var experts;  ///< 1 x E
        Var gate;     ///< 1 x E
        Var encoded;  ///< E_i, (K+1) x d
    };

    Bound bind(Tape& tape) const
    {
        Bound b;
        const std::size_t K = this->K();
        b.row = RowEncoder::bind(tape, K);
        if (config_.ablation == Ablation::wo_ce) {
            b.column_embeddings = tape.constant(Tensor::matrix(K, config_.d, 1.0));
        } else {
            ColumnEncoder ce = ColumnEncoder::bind(tape);
            b.column_embeddings = encode_columns(ce, tape.constant(train_columns_));
        }
        b.cls = tape.param("cls");
        for (std::size_t l = 0; l < config_.layers; ++l)
            b.stack.push_back(AttentionLayer::bind(tape, "enc.layer" + std::to_string(l), layer_shape(K + 1)));
        if (has_moe()) {
            for (auto t : kIndicatorTypes)
                b.experts[static_cast<std::size_t>(t)] = bind_expert(tape, t, layer_shape(partition_.count(t) + 1));
            b.gate = Gate::bind(tape);
        } else {
            b.single_layer = AttentionLayer::bind(tape, "single.layer", layer_shape(K + 1));
            b.single_head = PredictionHead::bind(tape, "single.head", config_.ln_eps);
        }
        return b;
    }

    /// Forward pass for one scaled sample.
    Output forward(const Bound& b, std::span<const double> x) const
    {
        Tape& tape = b.cls.tape();
        Var h = fuse(encode_row(b.row, x), b.column_embeddings, b.cls);
        Var e = run_stack(h, b.stack);
        Output out;
        out.encoded = e;
        if (has_moe()) {
            auto blocks = combine_features(e, partition_);
            std::vector<Var> preds;
            for (std::size_t t = 0; t < 4; ++t)
                preds.push_back(expert_predict(blocks[t], b.experts[t]));
            out.experts = concat_cols(preds);
            out.gate = gate(slice_rows(e, 0, 1), b.gate);
            out.y_hat = matmul_nt(out.gate, out.experts);
        } else {
            Var z = transformer_layer(e, *b.single_layer);
            out.y_hat = head_predict(slice_rows(z, 0, 1), *b.single_head);
            out.experts = out.y_hat;
            out.gate = tape.constant(Tensor::scalar(1.0));
        }
        return out;
    }

    /// Rejects inputs that were not min-max scaled.
    void check_scaled(std::span<const double> x) const
    {
        if (x.size() != K())
            throw InputError("predict: expected " + std::to_string(K()) + " indicators, got " +
                             std::to_string(x.size()));
        for (std::size_t j = 0; j < x.size(); ++j)
            if (!(x[j] >= -1e-9 && x[j] <= 1.0 + 1e-9))
                throw InputError("predict: indicator '" + schema_[j].name + "' value " + std::to_string(x[j]) +
                                 " is outside [0, 1]; inputs must be scaled");
    }

    [[nodiscard]] Prediction predict(std::span<const double> x) const
    {
        return predict_batch(std::vector<std::vector<double>>{{x.begin(), x.end()}}).front();
    }

    /// Inference over many scaled samples; column embeddings are computed once.
    [[nodiscard]] std::vector<Prediction> predict_batch(const std::vector<std::vector<double>>& xs) const
    {
        for (const auto& x : xs)
            check_scaled(x);
        Tape tape(const_cast<ParamStore*>(&params_), false);
        const Bound b = bind(tape);
        const std::size_t mark = tape.node_count();
        std::vector<Prediction> out;
        out.reserve(xs.size());
        for (const auto& x : xs) {
            const Output o = forward(b, x);
            Prediction p;
            p.y_hat = o.y_hat.value().item();
            p.gate.assign(o.gate.value().data().begin(), o.gate.value().data().end());
            p.expert.assign(o.experts.value().data().begin(), o.experts.value().data().end());
            out.push_back(std::move(p));
            tape.rewind(mark);
        }
        return out;
    }

private:
    ModelConfig config_;
    std::vector<IndicatorColumn> schema_;
    TypePartition partition_;
    Tensor train_columns_;
    ParamStore params_;
};

/// K x N matrix of scaled training columns (row j = column j over the training rows).
inline Tensor training_columns(const std::vector<std::vector<double>>& scaled_train_rows, std::size_t K)
{
    if (scaled_train_rows.empty())
        throw ConfigError("training_columns: no training rows");
    const std::size_t n = scaled_train_rows.size();
    Tensor v = Tensor::matrix(K, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (scaled_train_rows[i].size() != K)
            throw ShapeError("training_columns: row " + std::to_string(i) + " has " +
                             std::to_string(scaled_train_rows[i].size()) + " values, expected " + std::to_string(K));
        for (std::size_t j = 0; j < K; ++j)
            v(j, i) = scaled_train_rows[i][j];
    }
    return v;
}

} // namespace tljd
