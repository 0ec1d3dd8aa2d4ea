#include "tljd/run.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tljd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
    fs::path p = fs::temp_directory_path() / ("tljd_run_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream(p) << text;
}

std::vector<std::vector<std::string>> read_csv(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

/// A run over a small synthetic table that trains in well under a second.
json small_run()
{
    return json{{"d", 4},
                {"heads", 2},
                {"layers", 1},
                {"epochs", 2},
                {"batch_size", 16},
                {"learning_rate", 3e-3},
                {"seed", 3},
                {"synthetic", {{"cities", 16}, {"per_type", {2, 2, 2, 2}}, {"seed", 9}}}};
}

json read_json(const fs::path& p)
{
    return json::parse(slurp(p));
}

} // namespace

TEST(Config, DataSourceRules)
{
    EXPECT_THROW(parse_run_config(json{{"d", 8}}), ConfigError);
    json both = small_run();
    both["data"] = "x.csv";
    both["schema"] = "s.csv";
    EXPECT_THROW(parse_run_config(both), ConfigError);
    EXPECT_THROW(parse_run_config(json{{"data", "x.csv"}}), ConfigError);
    json unknown = small_run();
    unknown["learning_rat"] = 0.1;
    try {
        parse_run_config(unknown);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
    }
    json bad_lambda = small_run();
    bad_lambda["lambda"] = 2.0;
    EXPECT_THROW(parse_run_config(bad_lambda), ConfigError);
    json single = small_run();
    single["protocol"] = "ccp_single_year";
    EXPECT_THROW(parse_run_config(single), ConfigError);
}

TEST(Config, RelativePathsResolveAgainstConfigDirectory)
{
    const fs::path dir = temp_dir("paths");
    write_file(dir / "run.json", R"({"data": "d.csv", "schema": "sub/../s.csv", "output_dir": "out"})");
    const RunConfig rc = load_run_config((dir / "run.json").string());
    EXPECT_EQ(fs::path(*rc.data_path), fs::weakly_canonical(dir / "d.csv"));
    EXPECT_EQ(fs::path(*rc.schema_path), fs::weakly_canonical(dir / "s.csv"));
    EXPECT_EQ(fs::path(rc.output_dir), fs::weakly_canonical(dir / "out"));
    EXPECT_EQ(rc.split_seed, rc.train.seed);
}

TEST(Generate, DefaultSizeAndRefusalToOverwrite)
{
    const fs::path dir = temp_dir("generate");
    const RunConfig rc = parse_run_config(json{{"synthetic", json::object()}});
    const GenerateResult r = cmd_generate(rc, dir, false);
    EXPECT_EQ(r.rows, 800u);
    // city_id, year, 40 indicators, fdi
    EXPECT_EQ(r.columns, 43u);
    const auto csv = read_csv(slurp(r.data_path));
    ASSERT_EQ(csv.size(), 801u);
    for (const auto& row : csv)
        EXPECT_EQ(row.size(), 43u);
    EXPECT_THROW(cmd_generate(rc, dir, false), ConfigError);
    EXPECT_NO_THROW(cmd_generate(rc, dir, true));
}

TEST(Generate, SameSeedGivesByteIdenticalFiles)
{
    const RunConfig rc = parse_run_config(small_run());
    const GenerateResult a = cmd_generate(rc, temp_dir("regen_a"), false);
    const GenerateResult b = cmd_generate(rc, temp_dir("regen_b"), false);
    EXPECT_EQ(slurp(a.data_path), slurp(b.data_path));
    EXPECT_EQ(slurp(a.schema_path), slurp(b.schema_path));
    EXPECT_EQ(slurp(a.metadata_path), slurp(b.metadata_path));
}

TEST(Generate, ConfigWithoutSyntheticBlockIsConfigError)
{
    const RunConfig rc = parse_run_config(json{{"data", "d.csv"}, {"schema", "s.csv"}});
    EXPECT_THROW(cmd_generate(rc, temp_dir("nosynth"), false), ConfigError);
}

TEST(TrainCommand, WritesManifestCheckpointAndLog)
{
    const fs::path dir = temp_dir("train");
    std::ostringstream log;
    cmd_train(parse_run_config(small_run()), dir, false, log);
    for (const char* f : {"manifest.json", "checkpoint.bin", "train_log.tsv", "timing.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const json m = read_json(dir / "manifest.json");
    EXPECT_EQ(m["manifest_format_version"], kManifestFormatVersion);
    EXPECT_EQ(m["checkpoint"], "checkpoint.bin");
    EXPECT_EQ(m["ablation"], "full");
    EXPECT_EQ(m["seed"], 3);
    const std::size_t n_test = m["split_sizes"]["test"];
    EXPECT_EQ(m["metrics"]["test"]["n"], n_test);
    EXPECT_TRUE(m["metrics"]["test"]["mae"].is_number());
    EXPECT_FALSE(log.str().empty());
    EXPECT_THROW(cmd_train(parse_run_config(small_run()), dir, false, log), ConfigError);
}

TEST(TrainCommand, AblationIsRecordedInManifestAndCheckpoint)
{
    const fs::path dir = temp_dir("wo_ce");
    json cfg = small_run();
    cfg["ablation"] = "wo_ce";
    std::ostringstream log;
    cmd_train(parse_run_config(cfg), dir, false, log);
    EXPECT_EQ(read_json(dir / "manifest.json")["ablation"], "wo_ce");
    EXPECT_EQ(read_json(dir / "manifest.json")["config"]["ablation"], "wo_ce");
    const TrainedModel tm = load_trained((dir / "checkpoint.bin").string());
    EXPECT_EQ(tm.model.config().ablation, Ablation::wo_ce);
}

TEST(TrainCommand, SingleYearProtocolTestsOnlyThatYear)
{
    json cfg = small_run();
    cfg["protocol"] = "ccp_single_year";
    cfg["protocol_year"] = 2018;
    const RunConfig rc = parse_run_config(cfg);
    const IndicatorTable table = load_run_table(rc);
    const TrainResult r = run_training(rc, table);
    std::size_t year_rows = 0;
    for (const auto& row : table.rows)
        year_rows += row.year == 2018;
    EXPECT_EQ(r.split.train.size() + r.split.val.size() + r.split.test.size(), year_rows);
    for (std::size_t i : r.split.test)
        EXPECT_EQ(table.rows[i].year, 2018);
    EXPECT_EQ(r.test.n, r.split.test.size());
    EXPECT_EQ(r.manifest["protocol"], "ccp_single_year(2018)");
}

TEST(TrainCommand, ManifestReplayIsBitIdentical)
{
    const fs::path a = temp_dir("replay_a");
    const fs::path b = temp_dir("replay_b");
    std::ostringstream log;
    cmd_train(parse_run_config(small_run()), a, false, log);
    cmd_train(load_run_config((a / "manifest.json").string()), b, false, log);
    EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
    EXPECT_EQ(slurp(a / "checkpoint.bin"), slurp(b / "checkpoint.bin"));
    EXPECT_EQ(slurp(a / "train_log.tsv"), slurp(b / "train_log.tsv"));
    EXPECT_EQ(read_json(a / "manifest.json")["metrics"]["test"]["mae"].get<double>(),
              read_json(b / "manifest.json")["metrics"]["test"]["mae"].get<double>());
}

TEST(TrainCommand, SweepWritesOneRunPerEntry)
{
    const fs::path dir = temp_dir("sweep");
    json cfg = small_run();
    cfg["sweep"] = json::array({{{"lambda", 0.0}}, {{"lambda", 1.0}, {"epochs", 1}}});
    std::ostringstream log;
    const auto manifests = cmd_train(parse_run_config(cfg), dir, false, log);
    ASSERT_EQ(manifests.size(), 2u);
    EXPECT_EQ(read_json(dir / "sweep_0" / "manifest.json")["config"]["lambda"], 0.0);
    EXPECT_EQ(read_json(dir / "sweep_1" / "manifest.json")["config"]["epochs"], 1);
    EXPECT_EQ(read_csv(slurp(dir / "sweep.tsv")).size(), 3u);
    json bad = small_run();
    bad["sweep"] = json::array({{{"protocol", "ctp"}}});
    EXPECT_THROW(parse_run_config(bad), ConfigError);
}

TEST(PredictCommand, ConvergedNoiselessModelFitsItsTrainingRows)
{
    const fs::path dir = temp_dir("converged");
    json cfg{{"d", 8},
             {"heads", 2},
             {"layers", 1},
             {"epochs", 150},
             {"batch_size", 16},
             {"learning_rate", 3e-3},
             {"lambda", 0.0},
             {"seed", 2},
             {"synthetic",
              {{"cities", 30}, {"per_type", {2, 2, 2, 2}}, {"sigma", 0.0}, {"regions", 1}, {"pairwise", false}}}};
    const RunConfig rc = parse_run_config(cfg);
    cmd_generate(rc, dir, false);
    std::ostringstream log;
    cmd_train(rc, dir / "run", false, log);

    const TrainedModel tm = load_trained((dir / "run" / "checkpoint.bin").string());
    const IndicatorTable table = load_for_model(tm, (dir / "data.csv").string(), (dir / "schema.csv").string());
    const SplitPlan split = make_split(table, rc.protocol, rc.split_seed);
    IndicatorTable train_rows{table.schema, select_rows(table, split.train)};
    const MetricsReport m = cmd_evaluate(tm, train_rows, "train");
    EXPECT_GE(m.r2_value(), 0.99) << "train R2 " << m.r2_value();

    const std::string csv = predictions_csv(train_rows, tm.predict_rows(train_rows.rows));
    const auto rows = read_csv(csv);
    ASSERT_EQ(rows.size(), train_rows.rows.size() + 1);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"city_id", "year", "fdi", "y_hat"}));
}

TEST(PredictCommand, SchemaMismatchNamesTheColumn)
{
    const fs::path dir = temp_dir("mismatch");
    const RunConfig rc = parse_run_config(small_run());
    cmd_generate(rc, dir, false);
    std::ostringstream log;
    cmd_train(rc, dir / "run", false, log);
    const TrainedModel tm = load_trained((dir / "run" / "checkpoint.bin").string());

    std::string schema = slurp(dir / "schema.csv");
    const std::string first = tm.model.schema()[0].name;
    schema.replace(schema.find(first), first.size(), "renamed_col");
    write_file(dir / "schema_renamed.csv", schema);
    try {
        load_for_model(tm, (dir / "data.csv").string(), (dir / "schema_renamed.csv").string());
        FAIL() << "expected CompatibilityError";
    } catch (const CompatibilityError& e) {
        EXPECT_NE(std::string(e.what()).find(first), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("renamed_col"), std::string::npos) << e.what();
    }
}

TEST(WeightsCommand, RowsAreProbabilityVectors)
{
    const fs::path dir = temp_dir("weights");
    const RunConfig rc = parse_run_config(small_run());
    std::ostringstream log;
    cmd_train(rc, dir, false, log);
    const TrainedModel tm = load_trained((dir / "checkpoint.bin").string());
    const IndicatorTable table = load_run_table(rc);
    const WeightsExport w = cmd_weights(tm, table);
    const auto rows = read_csv(w.weights_csv);
    ASSERT_EQ(rows.size(), table.rows.size() + 1);
    EXPECT_EQ(rows[0].size(), 11u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 2; k < 6; ++k)
            s += std::stod(rows[i][k]);
        EXPECT_NEAR(s, 1.0, 1e-9);
        double mix = 0.0;
        for (std::size_t k = 0; k < 4; ++k)
            mix += std::stod(rows[i][2 + k]) * std::stod(rows[i][7 + k]);
        EXPECT_NEAR(mix, std::stod(rows[i][6]), 1e-9);
    }
    EXPECT_EQ(read_csv(w.summary_csv).size(), 5u);
}

TEST(WeightsCommand, ModelWithoutExpertsIsRejected)
{
    const fs::path dir = temp_dir("weights_wo_moe");
    json cfg = small_run();
    cfg["ablation"] = "wo_moe";
    const RunConfig rc = parse_run_config(cfg);
    std::ostringstream log;
    cmd_train(rc, dir, false, log);
    const TrainedModel tm = load_trained((dir / "checkpoint.bin").string());
    EXPECT_THROW(cmd_weights(tm, load_run_table(rc)), ConfigError);
}

TEST(QuartileSummary, EightCitiesGiveFourGroupsOfTwo)
{
    IndicatorTable t;
    t.schema = {{"a", IndicatorType::PJ}, {"b", IndicatorType::DJ}, {"c", IndicatorType::JE}, {"d", IndicatorType::JC}};
    std::vector<Prediction> preds;
    // City k has mean FDI k and puts all weight on expert k % 4.
    for (int k = 0; k < 8; ++k)
        for (int year : {2016, 2017}) {
            t.rows.push_back({"city" + std::to_string(k), year, {0, 0, 0, 0}, k + (year == 2016 ? -0.5 : 0.5)});
            Prediction p;
            p.gate = {0, 0, 0, 0};
            p.gate[static_cast<std::size_t>(k % 4)] = 1.0;
            preds.push_back(p);
        }
    const auto groups = quartile_summary(t, preds);
    ASSERT_EQ(groups.size(), 4u);
    for (std::size_t g = 0; g < 4; ++g) {
        EXPECT_EQ(groups[g].group, g + 1);
        ASSERT_EQ(groups[g].cities.size(), 2u);
        EXPECT_EQ(groups[g].rows, 4u);
        const int hi = 7 - 2 * static_cast<int>(g);
        EXPECT_EQ(groups[g].cities[0], "city" + std::to_string(hi));
        EXPECT_EQ(groups[g].cities[1], "city" + std::to_string(hi - 1));
        EXPECT_DOUBLE_EQ(groups[g].mean_fdi, hi - 0.5);
        EXPECT_DOUBLE_EQ(groups[g].mean_gate[static_cast<std::size_t>(hi % 4)], 0.5);
        EXPECT_DOUBLE_EQ(groups[g].mean_gate[static_cast<std::size_t>((hi - 1) % 4)], 0.5);
    }
    t.rows.resize(6);
    preds.resize(6);
    EXPECT_THROW(quartile_summary(t, preds), ConfigError);
}

TEST(AblateCommand, TableHasOneRowPerVariant)
{
    const fs::path dir = temp_dir("ablate");
    const std::string text = cmd_ablate(parse_run_config(small_run()), dir, false);
    const auto rows = read_csv(slurp(dir / "ablation.tsv"));
    EXPECT_EQ(rows.size(), 4u);
    EXPECT_NE(text.find("TLJD\t"), std::string::npos);
    EXPECT_NE(text.find("w/o moe\t"), std::string::npos);
    EXPECT_NE(text.find("w/o ce\t"), std::string::npos);
    EXPECT_THROW(cmd_ablate(parse_run_config(small_run()), dir, false), ConfigError);
}
