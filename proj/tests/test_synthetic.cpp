#include "tljd/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

using namespace tljd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
    fs::path p = fs::temp_directory_path() / ("tljd_synth_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Target recomputed from a metadata listing, independent of the generator's own helper.
double recompute(const SynthMetadata& m, const IndicatorTable& t, const SampleRow& row, std::size_t region)
{
    double f[4] = {0, 0, 0, 0};
    for (std::size_t j = 0; j < t.K(); ++j)
        f[static_cast<int>(t.schema[j].type)] += m.linear[j] * row.indicators[j];
    for (int type = 0; type < 4; ++type)
        for (const auto& p : m.pairs[static_cast<std::size_t>(type)])
            f[type] += p.coef * row.indicators[p.a] * row.indicators[p.b];
    double y = 0.0;
    for (int type = 0; type < 4; ++type)
        y += m.omega[region][static_cast<std::size_t>(type)] * f[type];
    return y;
}

} // namespace

TEST(Synthetic, DefaultShape)
{
    const SyntheticData d = generate_synthetic(SynthConfig{});
    EXPECT_EQ(d.table.rows.size(), 800u);
    EXPECT_EQ(d.table.K(), 40u);
    for (const auto& r : d.table.rows)
        for (double v : r.indicators) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(Synthetic, ZeroNoiseSingleRegionLinearIsReproducibleFromWrittenMetadata)
{
    SynthConfig c;
    c.cities = 30;
    c.sigma = 0.0;
    c.regions = 1;
    c.pairwise = false;
    c.per_type = {3, 2, 4, 1};
    const SyntheticData d = generate_synthetic(c);
    const fs::path dir = temp_dir("linear");
    write_synth_metadata(d.metadata, d.table, (dir / "meta.txt").string());
    const SynthMetadata m = read_synth_metadata((dir / "meta.txt").string(), d.table);
    EXPECT_FALSE(m.marker_column.has_value());
    for (const auto& pt : m.pairs)
        EXPECT_TRUE(pt.empty());
    for (const auto& row : d.table.rows)
        EXPECT_NEAR(row.fdi, recompute(m, d.table, row, 0), 1e-12);
}

TEST(Synthetic, ZeroNoiseRegionalTargetsMatchIndependentRecomputation)
{
    SynthConfig c;
    c.cities = 40;
    c.sigma = 0.0;
    const SyntheticData d = generate_synthetic(c);
    const fs::path dir = temp_dir("regional");
    write_synth_metadata(d.metadata, d.table, (dir / "meta.txt").string());
    const SynthMetadata m = read_synth_metadata((dir / "meta.txt").string(), d.table);
    std::map<std::string, std::size_t> region;
    for (std::size_t i = 0; i < m.city_ids.size(); ++i)
        region[m.city_ids[i]] = m.city_region[i];
    for (const auto& row : d.table.rows)
        EXPECT_NEAR(row.fdi, recompute(m, d.table, row, region.at(row.city_id)), 1e-12);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t t = 0; t < 4; ++t)
            EXPECT_EQ(m.omega[r][t], r == t ? 0.55 : 0.15);
    EXPECT_EQ(m.pairs[0].size(), 1u);
    EXPECT_EQ(m.pairs[1].size(), 1u);
    EXPECT_TRUE(m.pairs[2].empty());
    EXPECT_TRUE(m.pairs[3].empty());
}

TEST(Synthetic, MarkerColumnEncodesRegion)
{
    const SyntheticData d = generate_synthetic(SynthConfig{});
    ASSERT_TRUE(d.metadata.marker_column.has_value());
    const std::size_t j = *d.metadata.marker_column;
    EXPECT_EQ(d.table.schema[j].type, IndicatorType::JC);
    EXPECT_EQ(d.metadata.linear[j], 0.0);
    std::map<std::string, std::size_t> region;
    for (std::size_t i = 0; i < d.metadata.city_ids.size(); ++i)
        region[d.metadata.city_ids[i]] = d.metadata.city_region[i];
    for (const auto& row : d.table.rows)
        EXPECT_EQ(row.indicators[j], static_cast<double>(region.at(row.city_id)) / 3.0);
}

TEST(Synthetic, SameConfigIsBitIdentical)
{
    const SyntheticData a = generate_synthetic(SynthConfig{});
    const SyntheticData b = generate_synthetic(SynthConfig{});
    ASSERT_EQ(a.table.rows.size(), b.table.rows.size());
    for (std::size_t i = 0; i < a.table.rows.size(); ++i) {
        EXPECT_EQ(a.table.rows[i].indicators, b.table.rows[i].indicators);
        EXPECT_EQ(a.table.rows[i].fdi, b.table.rows[i].fdi);
    }
    SynthConfig other;
    other.seed = 8;
    EXPECT_NE(generate_synthetic(other).table.rows[0].fdi, a.table.rows[0].fdi);
}

TEST(Synthetic, ZeroIndicatorCountIsConfigError)
{
    SynthConfig c;
    c.per_type = {10, 0, 10, 10};
    EXPECT_THROW(generate_synthetic(c), ConfigError);
}
