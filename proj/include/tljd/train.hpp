#pragma once

#include "tljd/adam.hpp"
#include "tljd/dataset.hpp"
#include "tljd/errors.hpp"
#include "tljd/losses.hpp"
#include "tljd/metrics.hpp"
#include "tljd/model.hpp"
#include "tljd/ops.hpp"
#include "tljd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace tljd {

enum class TargetTransform { none, log1p };

inline const char* to_string(TargetTransform t)
{
    return t == TargetTransform::log1p ? "log1p" : "none";
}

inline TargetTransform parse_target_transform(const std::string& s)
{
    if (s == "none")
        return TargetTransform::none;
    if (s == "log1p")
        return TargetTransform::log1p;
    throw ConfigError("unknown target transform '" + s + "' (expected none or log1p)");
}

struct TrainConfig {
    std::size_t d = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    double lambda = 0.4;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::uint64_t seed = 1;
    Ablation ablation = Ablation::full;
    TargetTransform target_transform = TargetTransform::none;

    void validate() const
    {
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw ConfigError("train: lambda=" + std::to_string(lambda) + " is outside [0, 1]");
        if (batch_size < 1)
            throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 1)
            throw ConfigError("train: epochs must be >= 1");
        if (!(learning_rate >= 0.0))
            throw ConfigError("train: learning_rate must be non-negative");
        model_config().validate();
    }

    [[nodiscard]] ModelConfig model_config() const
    {
        ModelConfig m;
        m.d = d;
        m.layers = layers;
        m.heads = heads;
        m.ablation = ablation;
        return m;
    }
};

inline double forward_transform(TargetTransform t, double y)
{
    if (t == TargetTransform::none)
        return y;
    if (!(y > -1.0))
        throw InputError("log1p target transform needs fdi > -1, got " + std::to_string(y));
    return std::log1p(y);
}

inline double inverse_transform(TargetTransform t, double y)
{
    return t == TargetTransform::none ? y : std::expm1(y);
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    MetricsReport val;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;

    /// Tab-separated, one line per epoch: epoch train_loss val_r2 val_rmse val_mae.
    [[nodiscard]] std::string to_tsv() const
    {
        std::ostringstream os;
        os << "epoch\ttrain_loss\tval_r2\tval_rmse\tval_mae\n";
        for (const auto& e : epochs) {
            os << e.epoch << '\t' << detail::format_double(e.train_loss) << '\t'
               << (e.val.r2 ? detail::format_double(*e.val.r2) : std::string("nan")) << '\t'
               << detail::format_double(e.val.rmse) << '\t' << detail::format_double(e.val.mae) << '\n';
        }
        return os.str();
    }
};

struct TrainedModel {
    TljdModel model;
    ColumnScaler scaler;
    TargetTransform target_transform = TargetTransform::none;
    TrainLog log;

    /// Predictions in the original target units for raw (unscaled) rows.
    [[nodiscard]] std::vector<Prediction> predict_rows(const std::vector<SampleRow>& rows) const
    {
        auto preds = model.predict_batch(apply_scaler(scaler, rows));
        if (target_transform != TargetTransform::none)
            for (auto& p : preds) {
                p.y_hat = inverse_transform(target_transform, p.y_hat);
                for (double& v : p.expert)
                    v = inverse_transform(target_transform, v);
            }
        return preds;
    }

    [[nodiscard]] MetricsReport evaluate(const std::vector<SampleRow>& rows, std::string split = {}) const
    {
        const auto preds = predict_rows(rows);
        std::vector<double> y, y_hat;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            y.push_back(rows[i].fdi);
            y_hat.push_back(preds[i].y_hat);
        }
        return compute_metrics(y, y_hat, std::move(split));
    }
};

inline std::vector<SampleRow> select_rows(const IndicatorTable& table, const std::vector<std::size_t>& indices)
{
    std::vector<SampleRow> out;
    out.reserve(indices.size());
    for (std::size_t i : indices)
        out.push_back(table.rows.at(i));
    return out;
}

/// Joint loss of one minibatch on a recording tape.
struct BatchLoss {
    Var loss;
    Var reg;
    Var er;
};

inline BatchLoss batch_loss(const TljdModel& model, const TljdModel::Bound& bound,
                            const std::vector<std::vector<double>>& xs, std::span<const double> y, double lambda)
{
    std::vector<Var> preds, experts, gates;
    for (const auto& x : xs) {
        auto out = model.forward(bound, x);
        preds.push_back(out.y_hat);
        experts.push_back(out.experts);
        gates.push_back(out.gate);
    }
    Var reg = loss_reg(concat_rows(preds), y);
    Var er = loss_er(concat_rows(experts), concat_rows(gates), y);
    return {loss_joint(reg, er, lambda), reg, er};
}

/// Minibatch Adam training on the joint loss. After each epoch the model is
/// scored on the validation rows; the parameters with the lowest validation
/// MAE (earliest epoch on ties) are returned.
inline TrainedModel train(const IndicatorTable& table, const SplitPlan& split, const TrainConfig& config)
{
    config.validate();
    if (split.train.empty() || split.val.empty())
        throw ConfigError("train: split needs non-empty train and validation sets");

    const ColumnScaler scaler = fit_scaler(table, split.train);
    const auto train_rows = select_rows(table, split.train);
    const auto val_rows = select_rows(table, split.val);
    const auto train_x = apply_scaler(scaler, train_rows);
    std::vector<double> train_y;
    for (const auto& r : train_rows)
        train_y.push_back(forward_transform(config.target_transform, r.fdi));

    TrainedModel result{TljdModel(config.model_config(), table.schema, training_columns(train_x, table.K()), config.seed),
                        scaler, config.target_transform, {}};
    TljdModel& model = result.model;
    ParamStore& params = model.params();
    AdamState adam = AdamState::init(params, AdamHyper{config.learning_rate, 0.9, 0.999, 1e-8});

    std::mt19937_64 shuffle_rng(config.seed ^ 0x5deece66dULL);
    std::vector<std::size_t> order(train_rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<Tensor> best;
    double best_mae = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<std::vector<double>> xs;
            std::vector<double> ys;
            for (std::size_t k = start; k < end; ++k) {
                xs.push_back(train_x[order[k]]);
                ys.push_back(train_y[order[k]]);
            }
            params.zero_grads();
            double loss_value = 0.0;
            const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
            try {
                Tape tape(&params, true);
                const auto bound = model.bind(tape);
                const BatchLoss bl = batch_loss(model, bound, xs, ys, config.lambda);
                loss_value = bl.loss.value().item();
                if (!std::isfinite(loss_value))
                    throw DivergenceError("training diverged: non-finite loss at " + where);
                tape.backward(bl.loss);
            } catch (const DomainError& e) {
                throw DivergenceError("training diverged at " + where + ": " + e.what());
            }
            adam_step(params, adam);
            loss_sum += loss_value * static_cast<double>(end - start);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val = result.evaluate(val_rows, "val");
        if (!std::isfinite(rec.val.mae))
            throw DivergenceError("training diverged: non-finite validation MAE at epoch " + std::to_string(epoch));
        if (rec.val.mae < best_mae) {
            best_mae = rec.val.mae;
            result.log.best_epoch = epoch;
            best.clear();
            for (const auto& name : params.names())
                best.push_back(params.value(name));
        }
        result.log.epochs.push_back(std::move(rec));
    }

    std::size_t k = 0;
    for (const auto& name : params.names())
        params.value(name) = std::move(best[k++]);
    return result;
}

} // namespace tljd
