// Command-line front end: generate, train, evaluate, predict, weights, ablate.

#include "tljd/run.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace tljd;

struct Options {
    std::string config;
    std::string out;
    bool force = false;
    std::string checkpoint;
    std::string data;
    std::string schema;
};

fs::path output_dir(const Options& o, const RunConfig* rc)
{
    if (!o.out.empty())
        return fs::path(o.out);
    if (rc != nullptr && !rc->output_dir.empty())
        return fs::path(rc->output_dir);
    throw ConfigError("no output directory: pass --out or set 'output_dir' in the config");
}

RunConfig require_config(const Options& o)
{
    if (o.config.empty())
        throw ConfigError("this command needs --config <path>");
    return load_run_config(o.config);
}

std::optional<std::string> optional_path(const std::string& s)
{
    if (s.empty())
        return std::nullopt;
    return s;
}

std::string r2_text(const MetricsReport& m)
{
    return m.r2 ? detail::format_double(*m.r2) : std::string("undefined (zero target variance)");
}

void print_metrics(std::ostream& os, const MetricsReport& m)
{
    os << m.split << ": n=" << m.n << " R2=" << r2_text(m) << " RMSE=" << detail::format_double(m.rmse)
       << " MAE=" << detail::format_double(m.mae) << '\n';
}

int run_generate(const Options& o)
{
    const RunConfig rc = require_config(o);
    const auto r = cmd_generate(rc, output_dir(o, &rc), o.force);
    std::cout << "generated " << r.rows << " rows, " << r.columns << " columns -> " << r.data_path.string() << '\n';
    return 0;
}

int run_train(const Options& o)
{
    const RunConfig rc = require_config(o);
    cmd_train(rc, output_dir(o, &rc), o.force);
    return 0;
}

int run_evaluate(const Options& o)
{
    if (o.checkpoint.empty())
        throw ConfigError("evaluate needs --checkpoint");
    const TrainedModel tm = load_trained(o.checkpoint);
    if (!o.data.empty()) {
        const IndicatorTable table = load_for_model(tm, o.data, optional_path(o.schema));
        print_metrics(std::cout, cmd_evaluate(tm, table));
        return 0;
    }
    const RunConfig rc = require_config(o);
    const IndicatorTable table = load_run_table(rc);
    check_schema_compatible(tm.model.schema(), table.schema);
    const SplitPlan split = make_split(table, rc.protocol, rc.split_seed);
    print_metrics(std::cout, tm.evaluate(select_rows(table, split.train), "train"));
    print_metrics(std::cout, tm.evaluate(select_rows(table, split.val), "val"));
    print_metrics(std::cout, tm.evaluate(select_rows(table, split.test), "test"));
    return 0;
}

IndicatorTable data_for(const Options& o, const TrainedModel& tm)
{
    if (o.checkpoint.empty() || o.data.empty())
        throw ConfigError("this command needs --checkpoint and --data");
    return load_for_model(tm, o.data, optional_path(o.schema));
}

int run_predict(const Options& o)
{
    const TrainedModel tm = load_trained(o.checkpoint);
    const IndicatorTable table = data_for(o, tm);
    const auto preds = tm.predict_rows(table.rows);
    const std::string csv = predictions_csv(table, preds);
    std::vector<double> y, y_hat;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        y.push_back(table.rows[i].fdi);
        y_hat.push_back(preds[i].y_hat);
    }
    const MetricsReport m = compute_metrics(y, y_hat, "predict");
    if (o.out.empty()) {
        std::cout << csv;
        print_metrics(std::cerr, m);
    } else {
        refuse_overwrite({fs::path(o.out) / "predictions.csv"}, o.force);
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "predictions.csv", csv);
        print_metrics(std::cout, m);
    }
    return 0;
}

int run_weights(const Options& o)
{
    const TrainedModel tm = load_trained(o.checkpoint);
    const IndicatorTable table = data_for(o, tm);
    const WeightsExport w = cmd_weights(tm, table);
    if (o.out.empty()) {
        std::cout << w.weights_csv << '\n' << w.summary_csv;
        return 0;
    }
    const fs::path dir(o.out);
    refuse_overwrite({dir / "weights.csv", dir / "weights_summary.csv"}, o.force);
    fs::create_directories(dir);
    write_text(dir / "weights.csv", w.weights_csv);
    write_text(dir / "weights_summary.csv", w.summary_csv);
    std::cout << w.summary_csv;
    return 0;
}

int run_ablate(const Options& o)
{
    const RunConfig rc = require_config(o);
    std::cout << cmd_ablate(rc, output_dir(o, &rc), o.force);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Judicial-indicator FDI regression with tabular attention and a mixture of experts"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "Run configuration JSON (or a run manifest)");
    app.add_option("--out", o.out, "Output directory");
    app.add_flag("--force", o.force, "Overwrite existing outputs");

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (data.csv, schema.csv, metadata.txt)");
    auto* trn = app.add_subcommand("train", "Train a model and write checkpoint, log and manifest");
    auto* evl = app.add_subcommand("evaluate", "Report R2 / RMSE / MAE for a checkpoint");
    auto* prd = app.add_subcommand("predict", "Write per-row predictions");
    auto* wts = app.add_subcommand("weights", "Export expert weights and the FDI-quartile summary");
    auto* abl = app.add_subcommand("ablate", "Train full, wo_moe and wo_ce and tabulate test metrics");
    for (auto* sub : {evl, prd, wts}) {
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train");
        sub->add_option("--data", o.data, "Data CSV");
        sub->add_option("--schema", o.schema, "Schema CSV (defaults to the checkpoint's schema)");
    }
    for (auto* sub : {gen, trn, evl, prd, wts, abl}) {
        sub->fallthrough();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen)
            return run_generate(o);
        if (*trn)
            return run_train(o);
        if (*evl)
            return run_evaluate(o);
        if (*prd)
            return run_predict(o);
        if (*wts)
            return run_weights(o);
        if (*abl)
            return run_ablate(o);
    } catch (const tljd::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
