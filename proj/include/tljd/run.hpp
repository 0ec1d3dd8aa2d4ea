#pragma once

#include "tljd/dataset.hpp"
#include "tljd/errors.hpp"
#include "tljd/metrics.hpp"
#include "tljd/model.hpp"
#include "tljd/persist.hpp"
#include "tljd/synthetic.hpp"
#include "tljd/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace tljd {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kManifestFormatVersion = 1;

/// A training run: hyperparameters, one data source, protocol and output location.
struct RunConfig {
    TrainConfig train;
    std::optional<std::string> data_path;
    std::optional<std::string> schema_path;
    std::optional<SynthConfig> synthetic;
    Protocol protocol = Protocol::ccp_mixed_year();
    std::uint64_t split_seed = 1;
    std::string output_dir;
    std::vector<json> sweep;
};

namespace detail {

template <class T>
T json_get(const json& j, const char* key, const char* where)
{
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(where) + ": field '" + key + "': " + e.what());
    }
}

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known, const char* where)
{
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key()))
            throw ConfigError(std::string(where) + ": unknown field '" + it.key() + "'");
}

inline const std::set<std::string>& train_keys()
{
    static const std::set<std::string> keys{"d",          "layers", "heads", "lambda",  "learning_rate",
                                            "batch_size", "epochs", "seed",  "ablation", "target_transform"};
    return keys;
}

inline std::string resolve_path(const std::string& p, const fs::path& base)
{
    fs::path path(p);
    if (path.is_relative())
        path = base / path;
    return fs::weakly_canonical(path).string();
}

inline SynthConfig synth_from_json(const json& j)
{
    if (!j.is_object())
        throw ConfigError("synthetic: expected an object");
    reject_unknown_keys(j, {"cities", "years", "per_type", "sigma", "seed", "regions", "pairwise"}, "synthetic");
    SynthConfig c;
    if (j.contains("cities"))
        c.cities = json_get<std::size_t>(j, "cities", "synthetic");
    if (j.contains("years"))
        c.years = json_get<std::vector<int>>(j, "years", "synthetic");
    if (j.contains("per_type")) {
        auto v = json_get<std::vector<std::size_t>>(j, "per_type", "synthetic");
        if (v.size() != 4)
            throw ConfigError("synthetic: per_type needs 4 counts (PJ, DJ, JE, JC)");
        std::copy(v.begin(), v.end(), c.per_type.begin());
    }
    if (j.contains("sigma"))
        c.sigma = json_get<double>(j, "sigma", "synthetic");
    if (j.contains("seed"))
        c.seed = json_get<std::uint64_t>(j, "seed", "synthetic");
    if (j.contains("regions"))
        c.regions = json_get<std::size_t>(j, "regions", "synthetic");
    if (j.contains("pairwise"))
        c.pairwise = json_get<bool>(j, "pairwise", "synthetic");
    c.validate();
    return c;
}

inline json synth_to_json(const SynthConfig& c)
{
    return json{{"cities", c.cities},
                {"years", c.years},
                {"per_type", std::vector<std::size_t>(c.per_type.begin(), c.per_type.end())},
                {"sigma", c.sigma},
                {"seed", c.seed},
                {"regions", c.regions},
                {"pairwise", c.pairwise}};
}

inline void apply_train_fields(TrainConfig& t, const json& j)
{
    const char* w = "config";
    if (j.contains("d"))
        t.d = json_get<std::size_t>(j, "d", w);
    if (j.contains("layers"))
        t.layers = json_get<std::size_t>(j, "layers", w);
    if (j.contains("heads"))
        t.heads = json_get<std::size_t>(j, "heads", w);
    if (j.contains("lambda"))
        t.lambda = json_get<double>(j, "lambda", w);
    if (j.contains("learning_rate"))
        t.learning_rate = json_get<double>(j, "learning_rate", w);
    if (j.contains("batch_size"))
        t.batch_size = json_get<std::size_t>(j, "batch_size", w);
    if (j.contains("epochs"))
        t.epochs = json_get<std::size_t>(j, "epochs", w);
    if (j.contains("seed"))
        t.seed = json_get<std::uint64_t>(j, "seed", w);
    if (j.contains("ablation"))
        t.ablation = parse_ablation(json_get<std::string>(j, "ablation", w));
    if (j.contains("target_transform"))
        t.target_transform = parse_target_transform(json_get<std::string>(j, "target_transform", w));
}

inline Protocol protocol_from_json(const json& j)
{
    const std::string kind = j.contains("protocol") ? json_get<std::string>(j, "protocol", "config") : "ccp_mixed_year";
    if (kind == "ccp_mixed_year")
        return Protocol::ccp_mixed_year();
    if (kind == "ctp")
        return Protocol::ctp();
    if (kind == "ccp_single_year") {
        if (!j.contains("protocol_year"))
            throw ConfigError("config: protocol ccp_single_year needs 'protocol_year'");
        return Protocol::ccp_single_year(json_get<int>(j, "protocol_year", "config"));
    }
    throw ConfigError("config: unknown protocol '" + kind + "' (expected ccp_single_year, ccp_mixed_year or ctp)");
}

inline std::string protocol_kind_name(const Protocol& p)
{
    switch (p.kind) {
    case ProtocolKind::ccp_single_year: return "ccp_single_year";
    case ProtocolKind::ccp_mixed_year: return "ccp_mixed_year";
    case ProtocolKind::ctp: return "ctp";
    }
    return "?";
}

} // namespace detail

/// Parses a run configuration. Relative paths are resolved against `base_dir`.
/// A run manifest is also accepted; its config snapshot is used.
inline RunConfig parse_run_config(const json& doc, const fs::path& base_dir = fs::current_path())
{
    if (!doc.is_object())
        throw ConfigError("config: expected a JSON object");
    if (doc.contains("manifest_format_version") && doc.contains("config"))
        return parse_run_config(doc.at("config"), base_dir);

    std::set<std::string> known = detail::train_keys();
    known.insert({"data", "schema", "synthetic", "protocol", "protocol_year", "split_seed", "output_dir", "sweep"});
    detail::reject_unknown_keys(doc, known, "config");

    RunConfig rc;
    detail::apply_train_fields(rc.train, doc);
    rc.protocol = detail::protocol_from_json(doc);
    rc.split_seed = doc.contains("split_seed") ? detail::json_get<std::uint64_t>(doc, "split_seed", "config")
                                               : rc.train.seed;
    if (doc.contains("output_dir"))
        rc.output_dir = detail::resolve_path(detail::json_get<std::string>(doc, "output_dir", "config"), base_dir);

    const bool has_files = doc.contains("data") || doc.contains("schema");
    const bool has_synth = doc.contains("synthetic");
    if (has_files == has_synth)
        throw ConfigError("config: give exactly one data source, either 'data' + 'schema' files or a 'synthetic' block");
    if (has_synth) {
        rc.synthetic = detail::synth_from_json(doc.at("synthetic"));
    } else {
        if (!doc.contains("data") || !doc.contains("schema"))
            throw ConfigError("config: file data source needs both 'data' and 'schema'");
        rc.data_path = detail::resolve_path(detail::json_get<std::string>(doc, "data", "config"), base_dir);
        rc.schema_path = detail::resolve_path(detail::json_get<std::string>(doc, "schema", "config"), base_dir);
    }

    if (doc.contains("sweep")) {
        const json& sw = doc.at("sweep");
        if (!sw.is_array())
            throw ConfigError("config: 'sweep' must be a list of override objects");
        for (const auto& item : sw) {
            if (!item.is_object())
                throw ConfigError("config: each sweep entry must be an object");
            detail::reject_unknown_keys(item, detail::train_keys(), "sweep entry");
            TrainConfig probe = rc.train;
            detail::apply_train_fields(probe, item);
            probe.validate();
            rc.sweep.push_back(item);
        }
    }
    rc.train.validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    return parse_run_config(doc, fs::absolute(path).parent_path());
}

/// JSON form of a run config. The output directory and sweep list are left
/// out: they locate or fan out a run but do not change its result.
inline json config_snapshot(const RunConfig& rc)
{
    const TrainConfig& t = rc.train;
    json j{{"d", t.d},
           {"layers", t.layers},
           {"heads", t.heads},
           {"lambda", t.lambda},
           {"learning_rate", t.learning_rate},
           {"batch_size", t.batch_size},
           {"epochs", t.epochs},
           {"seed", t.seed},
           {"ablation", to_string(t.ablation)},
           {"target_transform", to_string(t.target_transform)},
           {"protocol", detail::protocol_kind_name(rc.protocol)},
           {"split_seed", rc.split_seed}};
    if (rc.protocol.kind == ProtocolKind::ccp_single_year)
        j["protocol_year"] = rc.protocol.year;
    if (rc.synthetic) {
        j["synthetic"] = detail::synth_to_json(*rc.synthetic);
    } else {
        j["data"] = *rc.data_path;
        j["schema"] = *rc.schema_path;
    }
    return j;
}

/// Loads or generates the table named by the config.
inline IndicatorTable load_run_table(const RunConfig& rc)
{
    if (rc.synthetic)
        return generate_synthetic(*rc.synthetic).table;
    return load_table(*rc.data_path, *rc.schema_path);
}

inline json metrics_json(const MetricsReport& m)
{
    json j{{"n", m.n}, {"rmse", m.rmse}, {"mae", m.mae}};
    j["r2"] = m.r2 ? json(*m.r2) : json(nullptr);
    return j;
}

inline void write_text_atomic(const fs::path& path, const std::string& text)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw LoadError("cannot open '" + tmp.string() + "' for writing");
        os << text;
        if (!os.flush())
            throw LoadError("failed writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw LoadError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os.flush())
        throw LoadError("failed writing '" + path.string() + "'");
}

inline void refuse_overwrite(const std::vector<fs::path>& paths, bool force)
{
    if (force)
        return;
    for (const auto& p : paths)
        if (fs::exists(p))
            throw ConfigError("refusing to overwrite existing '" + p.string() + "' (pass --force)");
}

struct GenerateResult {
    std::size_t rows = 0;
    std::size_t columns = 0; ///< CSV columns, including city_id, year and fdi
    fs::path data_path, schema_path, metadata_path;
};

/// Writes data.csv, schema.csv and metadata.txt for the config's synthetic block.
inline GenerateResult cmd_generate(const RunConfig& rc, const fs::path& out_dir, bool force)
{
    if (!rc.synthetic)
        throw ConfigError("generate: config has no 'synthetic' block");
    GenerateResult r{0, 0, out_dir / "data.csv", out_dir / "schema.csv", out_dir / "metadata.txt"};
    refuse_overwrite({r.data_path, r.schema_path, r.metadata_path}, force);
    fs::create_directories(out_dir);
    const SyntheticData data = generate_synthetic(*rc.synthetic);
    write_table(data.table, r.data_path.string(), r.schema_path.string());
    write_synth_metadata(data.metadata, data.table, r.metadata_path.string());
    r.rows = data.table.rows.size();
    r.columns = data.table.K() + 3;
    return r;
}

struct TrainResult {
    TrainedModel model;
    SplitPlan split;
    MetricsReport train, val, test;
    json manifest;
};

/// Trains and scores one run without touching the filesystem.
inline TrainResult run_training(const RunConfig& rc, const IndicatorTable& table)
{
    SplitPlan split = make_split(table, rc.protocol, rc.split_seed);
    TrainedModel tm = train(table, split, rc.train);
    MetricsReport m_train = tm.evaluate(select_rows(table, split.train), "train");
    MetricsReport m_val = tm.evaluate(select_rows(table, split.val), "val");
    MetricsReport m_test = tm.evaluate(select_rows(table, split.test), "test");

    json manifest;
    manifest["manifest_format_version"] = kManifestFormatVersion;
    manifest["checkpoint_format_version"] = kCheckpointFormatVersion;
    manifest["config"] = config_snapshot(rc);
    manifest["seed"] = rc.train.seed;
    manifest["ablation"] = to_string(rc.train.ablation);
    manifest["protocol"] = to_string(rc.protocol);
    manifest["checkpoint"] = "checkpoint.bin";
    manifest["train_log"] = "train_log.tsv";
    manifest["timing"] = "timing.json";
    manifest["best_epoch"] = tm.log.best_epoch;
    manifest["schema_hash"] = schema_hash(table.schema);
    manifest["split_sizes"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
    manifest["metrics"] = {{"train", metrics_json(m_train)}, {"val", metrics_json(m_val)}, {"test", metrics_json(m_test)}};
    return {std::move(tm), std::move(split), m_train, m_val, m_test, std::move(manifest)};
}

/// Writes checkpoint.bin, train_log.tsv, timing.json and, last, manifest.json.
inline void write_run(const TrainResult& r, const fs::path& out_dir, double seconds)
{
    fs::create_directories(out_dir);
    save_trained(r.model, (out_dir / "checkpoint.bin").string());
    write_text(out_dir / "train_log.tsv", r.model.log.to_tsv());
    write_text(out_dir / "timing.json", json{{"wall_clock_seconds", seconds}}.dump(2) + "\n");
    write_text_atomic(out_dir / "manifest.json", r.manifest.dump(2) + "\n");
}

inline std::vector<fs::path> run_outputs(const fs::path& dir)
{
    return {dir / "manifest.json", dir / "checkpoint.bin", dir / "train_log.tsv", dir / "timing.json"};
}

inline RunConfig with_overrides(const RunConfig& base, const json& overrides)
{
    RunConfig rc = base;
    detail::apply_train_fields(rc.train, overrides);
    rc.train.validate();
    rc.sweep.clear();
    return rc;
}

/// Trains the config (or each sweep entry into sweep_<i>/) and returns the manifests written.
inline std::vector<json> cmd_train(const RunConfig& rc, const fs::path& out_dir, bool force, std::ostream& log = std::cout)
{
    const IndicatorTable table = load_run_table(rc);
    std::vector<std::pair<RunConfig, fs::path>> jobs;
    if (rc.sweep.empty()) {
        jobs.emplace_back(rc, out_dir);
    } else {
        for (std::size_t i = 0; i < rc.sweep.size(); ++i)
            jobs.emplace_back(with_overrides(rc, rc.sweep[i]), out_dir / ("sweep_" + std::to_string(i)));
    }
    for (const auto& [_, dir] : jobs)
        refuse_overwrite(run_outputs(dir), force);

    std::vector<json> manifests;
    for (const auto& [job, dir] : jobs) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult r = run_training(job, table);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_run(r, dir, seconds);
        log << dir.string() << ": best epoch " << r.model.log.best_epoch << ", test R2 "
            << (r.test.r2 ? detail::format_double(*r.test.r2) : std::string("undefined")) << ", RMSE "
            << detail::format_double(r.test.rmse) << ", MAE " << detail::format_double(r.test.mae) << '\n';
        manifests.push_back(r.manifest);
    }
    if (!rc.sweep.empty()) {
        std::ostringstream os;
        os << "run\toverrides\tval_mae\ttest_r2\ttest_rmse\ttest_mae\n";
        for (std::size_t i = 0; i < manifests.size(); ++i) {
            const json& m = manifests[i]["metrics"];
            os << "sweep_" << i << '\t' << rc.sweep[i].dump() << '\t' << m["val"]["mae"].dump() << '\t'
               << m["test"]["r2"].dump() << '\t' << m["test"]["rmse"].dump() << '\t' << m["test"]["mae"].dump()
               << '\n';
        }
        write_text(out_dir / "sweep.tsv", os.str());
    }
    return manifests;
}

/// Loads a data CSV for a trained model. With a schema file the schema must
/// match the checkpoint; without one the checkpoint's schema is used.
inline IndicatorTable load_for_model(const TrainedModel& tm, const std::string& data_path,
                                     const std::optional<std::string>& schema_path)
{
    if (schema_path) {
        auto schema = load_schema(*schema_path);
        check_schema_compatible(tm.model.schema(), schema);
        return load_table(data_path, std::move(schema));
    }
    return load_table(data_path, tm.model.schema());
}

inline MetricsReport cmd_evaluate(const TrainedModel& tm, const IndicatorTable& table, std::string split = "all")
{
    return tm.evaluate(table.rows, std::move(split));
}

/// CSV `city_id,year,fdi,y_hat`.
inline std::string predictions_csv(const IndicatorTable& table, const std::vector<Prediction>& preds)
{
    std::ostringstream os;
    os << "city_id,year,fdi,y_hat\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        os << table.rows[i].city_id << ',' << table.rows[i].year << ',' << detail::format_double(table.rows[i].fdi)
           << ',' << detail::format_double(preds[i].y_hat) << '\n';
    return os.str();
}

struct QuartileGroup {
    std::size_t group = 0; ///< 1 = highest-FDI cities
    std::vector<std::string> cities;
    std::size_t rows = 0;
    double mean_fdi = 0.0;
    std::array<double, 4> mean_gate{};
};

/// Ranks cities by mean FDI (descending, ties by city_id), cuts them into
/// four near-equal groups and averages each group's expert weights.
inline std::vector<QuartileGroup> quartile_summary(const IndicatorTable& table, const std::vector<Prediction>& preds)
{
    std::map<std::string, std::pair<double, std::size_t>> per_city;
    for (const auto& r : table.rows) {
        auto& acc = per_city[r.city_id];
        acc.first += r.fdi;
        acc.second += 1;
    }
    if (per_city.size() < 4)
        throw ConfigError("weights: quartile summary needs at least 4 cities, data has " +
                          std::to_string(per_city.size()));
    std::vector<std::pair<std::string, double>> ranked;
    for (const auto& [city, acc] : per_city)
        ranked.emplace_back(city, acc.first / static_cast<double>(acc.second));
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second)
            return a.second > b.second;
        return a.first < b.first;
    });

    std::map<std::string, std::size_t> group_of;
    std::vector<QuartileGroup> groups(4);
    const std::size_t n = ranked.size();
    for (std::size_t g = 0; g < 4; ++g) {
        groups[g].group = g + 1;
        for (std::size_t k = g * n / 4; k < (g + 1) * n / 4; ++k) {
            groups[g].cities.push_back(ranked[k].first);
            group_of[ranked[k].first] = g;
        }
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        auto& grp = groups[group_of.at(table.rows[i].city_id)];
        grp.rows += 1;
        grp.mean_fdi += table.rows[i].fdi;
        for (std::size_t t = 0; t < 4; ++t)
            grp.mean_gate[t] += preds[i].gate.at(t);
    }
    for (auto& grp : groups) {
        grp.mean_fdi /= static_cast<double>(grp.rows);
        for (double& a : grp.mean_gate)
            a /= static_cast<double>(grp.rows);
    }
    return groups;
}

struct WeightsExport {
    std::string weights_csv;
    std::string summary_csv;
    std::vector<Prediction> predictions;
    std::vector<QuartileGroup> groups;
};

/// Per-sample gate weights and expert predictions in PJ, DJ, JE, JC order,
/// plus the FDI-quartile summary.
inline WeightsExport cmd_weights(const TrainedModel& tm, const IndicatorTable& table)
{
    if (!tm.model.has_moe())
        throw ConfigError("weights: checkpoint was trained without experts (ablation wo_moe)");
    WeightsExport out;
    out.predictions = tm.predict_rows(table.rows);
    std::ostringstream os;
    os << "city_id,year,a_pj,a_dj,a_je,a_jc,y_hat,y_hat_pj,y_hat_dj,y_hat_je,y_hat_jc\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& p = out.predictions[i];
        os << table.rows[i].city_id << ',' << table.rows[i].year;
        for (double a : p.gate)
            os << ',' << detail::format_double(a);
        os << ',' << detail::format_double(p.y_hat);
        for (double e : p.expert)
            os << ',' << detail::format_double(e);
        os << '\n';
    }
    out.weights_csv = os.str();

    out.groups = quartile_summary(table, out.predictions);
    std::ostringstream ss;
    ss << "group,cities,rows,mean_fdi,a_pj,a_dj,a_je,a_jc\n";
    for (const auto& g : out.groups) {
        ss << g.group << ',' << g.cities.size() << ',' << g.rows << ',' << detail::format_double(g.mean_fdi);
        for (double a : g.mean_gate)
            ss << ',' << detail::format_double(a);
        ss << '\n';
    }
    out.summary_csv = ss.str();
    return out;
}

struct AblationRow {
    Ablation ablation;
    MetricsReport test;
};

inline const char* ablation_label(Ablation a)
{
    switch (a) {
    case Ablation::full: return "TLJD";
    case Ablation::wo_moe: return "w/o moe";
    case Ablation::wo_ce: return "w/o ce";
    }
    return "?";
}

/// Trains full, wo_moe and wo_ce with the config's seed and split.
inline std::vector<AblationRow> run_ablation(const RunConfig& rc, const IndicatorTable& table)
{
    std::vector<AblationRow> rows;
    for (Ablation a : {Ablation::full, Ablation::wo_moe, Ablation::wo_ce}) {
        RunConfig v = rc;
        v.train.ablation = a;
        v.sweep.clear();
        TrainResult r = run_training(v, table);
        rows.push_back({a, r.test});
    }
    return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows, const Protocol& protocol)
{
    std::ostringstream os;
    os << "model\tprotocol\tR2\tRMSE\tMAE\n";
    for (const auto& r : rows)
        os << ablation_label(r.ablation) << '\t' << to_string(protocol) << '\t'
           << (r.test.r2 ? detail::format_double(*r.test.r2) : std::string("nan")) << '\t'
           << detail::format_double(r.test.rmse) << '\t' << detail::format_double(r.test.mae) << '\n';
    return os.str();
}

inline std::string cmd_ablate(const RunConfig& rc, const fs::path& out_dir, bool force)
{
    refuse_overwrite({out_dir / "ablation.tsv"}, force);
    const IndicatorTable table = load_run_table(rc);
    const std::string text = ablation_table(run_ablation(rc, table), rc.protocol);
    fs::create_directories(out_dir);
    write_text(out_dir / "ablation.tsv", text);
    return text;
}

} // namespace tljd
