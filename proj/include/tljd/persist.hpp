#pragma once

#include "tljd/checkpoint.hpp"
#include "tljd/dataset.hpp"
#include "tljd/errors.hpp"
#include "tljd/model.hpp"
#include "tljd/train.hpp"

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace tljd {

/// Canonical one-line schema text: name:TYPE pairs joined by commas.
inline std::string schema_signature(const std::vector<IndicatorColumn>& schema)
{
    std::string s;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (j)
            s += ',';
        s += schema[j].name + ':' + to_string(schema[j].type);
    }
    return s;
}

/// 64-bit FNV-1a of the schema signature, as 16 hex digits.
inline std::string schema_hash(const std::vector<IndicatorColumn>& schema)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : schema_signature(schema)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::vector<IndicatorColumn> parse_schema_signature(const std::string& s)
{
    std::vector<IndicatorColumn> schema;
    for (const auto& item : detail::split_csv_line(s)) {
        const auto colon = item.rfind(':');
        if (colon == std::string::npos)
            throw LoadError("checkpoint: malformed schema entry '" + item + "'");
        auto type = parse_indicator_type(item.substr(colon + 1));
        if (!type)
            throw LoadError("checkpoint: unknown indicator type in schema entry '" + item + "'");
        schema.push_back({item.substr(0, colon), *type});
    }
    return schema;
}

/// Throws CompatibilityError naming every column that differs between the
/// schema a model was trained on and the schema of incoming data.
inline void check_schema_compatible(const std::vector<IndicatorColumn>& expected,
                                    const std::vector<IndicatorColumn>& actual)
{
    if (schema_hash(expected) == schema_hash(actual) && schema_signature(expected) == schema_signature(actual))
        return;
    std::vector<std::string> problems;
    for (std::size_t j = 0; j < expected.size(); ++j) {
        std::size_t k = 0;
        while (k < actual.size() && actual[k].name != expected[j].name)
            ++k;
        if (k == actual.size())
            problems.push_back("missing '" + expected[j].name + "'");
        else if (actual[k].type != expected[j].type)
            problems.push_back("'" + expected[j].name + "' is " + to_string(actual[k].type) + ", expected " +
                               to_string(expected[j].type));
        else if (k != j)
            problems.push_back("'" + expected[j].name + "' at position " + std::to_string(k) + ", expected " +
                               std::to_string(j));
    }
    for (const auto& col : actual) {
        bool known = false;
        for (const auto& e : expected)
            known = known || e.name == col.name;
        if (!known)
            problems.push_back("unexpected '" + col.name + "'");
    }
    std::string msg = "data schema does not match the checkpoint schema (hash " + schema_hash(expected) + " vs " +
                      schema_hash(actual) + "):";
    for (std::size_t i = 0; i < problems.size(); ++i)
        msg += (i ? "; " : " ") + problems[i];
    throw CompatibilityError(msg);
}

inline Checkpoint make_checkpoint(const TrainedModel& tm)
{
    const TljdModel& m = tm.model;
    Checkpoint ckpt = to_checkpoint(m.params());
    const ModelConfig& c = m.config();
    ckpt.metadata = {
        {"model.d", std::to_string(c.d)},
        {"model.layers", std::to_string(c.layers)},
        {"model.heads", std::to_string(c.heads)},
        {"model.d_hidden", std::to_string(c.hidden_width())},
        {"model.d_ff", std::to_string(c.ff_width())},
        {"model.ln_eps", detail::format_double(c.ln_eps)},
        {"model.ablation", to_string(c.ablation)},
        {"target_transform", to_string(tm.target_transform)},
        {"schema_hash", schema_hash(m.schema())},
        {"schema", schema_signature(m.schema())},
    };
    ckpt.entries.emplace_back("buffer.train_columns", m.train_columns());
    ckpt.entries.emplace_back("buffer.scaler_min", Tensor::row(tm.scaler.min));
    ckpt.entries.emplace_back("buffer.scaler_max", Tensor::row(tm.scaler.max));
    return ckpt;
}

namespace detail {

inline const std::string& require_meta(const Checkpoint& ckpt, const std::string& key)
{
    const std::string* v = ckpt.find_meta(key);
    if (v == nullptr)
        throw LoadError("checkpoint: missing metadata '" + key + "'");
    return *v;
}

inline std::size_t meta_size(const Checkpoint& ckpt, const std::string& key)
{
    const std::string& v = require_meta(ckpt, key);
    auto n = parse_int(v);
    if (!n || *n < 0)
        throw LoadError("checkpoint: metadata '" + key + "' is not a count: '" + v + "'");
    return static_cast<std::size_t>(*n);
}

inline const Tensor& require_entry(const Checkpoint& ckpt, const std::string& name)
{
    const Tensor* t = ckpt.find_entry(name);
    if (t == nullptr)
        throw LoadError("checkpoint: missing entry '" + name + "'");
    return *t;
}

} // namespace detail

inline TrainedModel restore_trained(const Checkpoint& ckpt)
{
    ModelConfig c;
    c.d = detail::meta_size(ckpt, "model.d");
    c.layers = detail::meta_size(ckpt, "model.layers");
    c.heads = detail::meta_size(ckpt, "model.heads");
    c.d_hidden = detail::meta_size(ckpt, "model.d_hidden");
    c.d_ff = detail::meta_size(ckpt, "model.d_ff");
    auto eps = detail::parse_double(detail::require_meta(ckpt, "model.ln_eps"));
    if (!eps)
        throw LoadError("checkpoint: malformed model.ln_eps");
    c.ln_eps = *eps;
    c.ablation = parse_ablation(detail::require_meta(ckpt, "model.ablation"));

    auto schema = parse_schema_signature(detail::require_meta(ckpt, "schema"));
    if (schema_hash(schema) != detail::require_meta(ckpt, "schema_hash"))
        throw LoadError("checkpoint: schema hash does not match the stored schema");

    const Tensor& lo = detail::require_entry(ckpt, "buffer.scaler_min");
    const Tensor& hi = detail::require_entry(ckpt, "buffer.scaler_max");
    if (lo.size() != schema.size() || hi.size() != schema.size())
        throw LoadError("checkpoint: scaler size does not match the schema");
    ColumnScaler scaler{lo.values(), hi.values()};

    TrainedModel tm{TljdModel(c, std::move(schema), detail::require_entry(ckpt, "buffer.train_columns"), ckpt.rng_seed),
                    std::move(scaler), parse_target_transform(detail::require_meta(ckpt, "target_transform")), {}};
    restore_params(tm.model.params(), ckpt);
    return tm;
}

inline void save_trained(const TrainedModel& tm, const std::string& path)
{
    save_checkpoint(path, make_checkpoint(tm));
}

inline TrainedModel load_trained(const std::string& path)
{
    return restore_trained(load_checkpoint(path));
}

} // namespace tljd
