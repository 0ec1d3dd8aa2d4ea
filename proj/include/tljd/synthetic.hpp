#pragma once

// Synthetic judicial-indicator tables with a known regional mixture structure.
//
// Every city belongs to a latent region r. A sample's target is
//   y = sum_t omega_r(t) * f_t(x) + noise,
// where omega_r puts 0.55 on the type matching the region and 0.15 on the
// other three, f_PJ and f_DJ are linear plus one pairwise product, and
// f_JE and f_JC are linear. When more than one region is used, the last JC
// column is a region code x = r / (R - 1) with no coefficient of its own.

#include "tljd/dataset.hpp"
#include "tljd/errors.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace tljd {

struct SynthConfig {
    std::size_t cities = 200;
    std::vector<int> years{2016, 2017, 2018, 2019};
    std::array<std::size_t, 4> per_type{10, 10, 10, 10}; ///< PJ, DJ, JE, JC
    double sigma = 0.1;
    std::uint64_t seed = 7;
    std::size_t regions = 4;   ///< 1..4
    bool pairwise = true;      ///< include the product term in f_PJ and f_DJ

    void validate() const
    {
        for (std::size_t t = 0; t < 4; ++t)
            if (per_type[t] == 0)
                throw ConfigError(std::string("synthetic config: indicator count for ") +
                                  to_string(kIndicatorTypes[t]) + " must be positive");
        if (cities == 0)
            throw ConfigError("synthetic config: cities must be positive");
        if (years.empty())
            throw ConfigError("synthetic config: years must be non-empty");
        for (std::size_t i = 1; i < years.size(); ++i)
            if (years[i] <= years[i - 1])
                throw ConfigError("synthetic config: years must be strictly increasing");
        if (regions < 1 || regions > 4)
            throw ConfigError("synthetic config: regions must be in 1..4");
        if (!(sigma >= 0.0))
            throw ConfigError("synthetic config: sigma must be non-negative");
    }
};

struct PairTerm {
    std::size_t a = 0; ///< canonical column index
    std::size_t b = 0;
    double coef = 0.0;
};

/// Ground truth emitted alongside a synthetic table.
struct SynthMetadata {
    SynthConfig config;
    std::vector<std::string> city_ids;
    std::vector<std::size_t> city_region;         ///< per city, 0-based
    std::array<std::array<double, 4>, 4> omega{}; ///< omega[region][type]
    std::vector<double> linear;                   ///< per canonical column
    std::array<std::vector<PairTerm>, 4> pairs;   ///< per type
    std::optional<std::size_t> marker_column;     ///< region-carrying column, if any
};

struct SyntheticData {
    IndicatorTable table;
    SynthMetadata metadata;
};

inline std::array<std::array<double, 4>, 4> region_omega()
{
    std::array<std::array<double, 4>, 4> w{};
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t t = 0; t < 4; ++t)
            w[r][t] = r == t ? 0.55 : 0.15;
    return w;
}

/// Noise-free target given the generator's ground truth.
inline double synthetic_signal(const SynthMetadata& meta, const IndicatorTable& table, std::size_t region,
                               const std::vector<double>& x)
{
    std::array<double, 4> f{};
    for (std::size_t j = 0; j < table.K(); ++j)
        f[static_cast<std::size_t>(table.schema[j].type)] += meta.linear[j] * x[j];
    for (std::size_t t = 0; t < 4; ++t)
        for (const auto& p : meta.pairs[t])
            f[t] += p.coef * x[p.a] * x[p.b];
    double y = 0.0;
    for (std::size_t t = 0; t < 4; ++t)
        y += meta.omega[region][t] * f[t];
    return y;
}

inline SyntheticData generate_synthetic(const SynthConfig& config)
{
    config.validate();
    SyntheticData out;
    auto& table = out.table;
    auto& meta = out.metadata;
    meta.config = config;
    meta.omega = region_omega();

    static constexpr const char* prefixes[4] = {"pj", "dj", "je", "jc"};
    std::array<std::vector<std::size_t>, 4> block;
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t k = 0; k < config.per_type[t]; ++k) {
            block[t].push_back(table.schema.size());
            table.schema.push_back({std::string(prefixes[t]) + "_" + std::to_string(k + 1), kIndicatorTypes[t]});
        }
    const std::size_t K = table.schema.size();

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    if (config.regions > 1)
        meta.marker_column = block[3].back();
    meta.linear.assign(K, 0.0);
    for (std::size_t j = 0; j < K; ++j)
        meta.linear[j] = coef(rng);
    if (meta.marker_column)
        meta.linear[*meta.marker_column] = 0.0;
    if (config.pairwise) {
        for (std::size_t t = 0; t < 2; ++t) {
            const std::size_t a = block[t][0];
            const std::size_t b = block[t].size() > 1 ? block[t][1] : block[t][0];
            const double magnitude = 2.0 + 2.0 * unit(rng);
            meta.pairs[t].push_back({a, b, unit(rng) < 0.5 ? -magnitude : magnitude});
        }
    }

    char id[32];
    for (std::size_t c = 0; c < config.cities; ++c) {
        std::snprintf(id, sizeof(id), "city_%04zu", c + 1);
        meta.city_ids.emplace_back(id);
        meta.city_region.push_back(config.regions == 1 ? 0 : static_cast<std::size_t>(rng() % config.regions));
    }

    for (std::size_t c = 0; c < config.cities; ++c) {
        for (int year : config.years) {
            SampleRow row;
            row.city_id = meta.city_ids[c];
            row.year = year;
            row.indicators.resize(K);
            for (std::size_t j = 0; j < K; ++j)
                row.indicators[j] = unit(rng);
            if (meta.marker_column)
                row.indicators[*meta.marker_column] =
                    static_cast<double>(meta.city_region[c]) / static_cast<double>(config.regions - 1);
            const double eps = noise(rng);
            row.fdi = synthetic_signal(meta, table, meta.city_region[c], row.indicators) + config.sigma * eps;
            table.rows.push_back(std::move(row));
        }
    }
    table.validate();
    return out;
}

/// Key-value ground-truth listing: one fact per line.
inline void write_synth_metadata(const SynthMetadata& meta, const IndicatorTable& table, const std::string& path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw LoadError("cannot open '" + path + "' for writing");
    const auto& c = meta.config;
    os << "seed " << c.seed << '\n';
    os << "sigma " << detail::format_double(c.sigma) << '\n';
    os << "cities " << c.cities << '\n';
    os << "years";
    for (int y : c.years)
        os << ' ' << y;
    os << '\n';
    os << "regions " << c.regions << '\n';
    os << "pairwise " << (c.pairwise ? 1 : 0) << '\n';
    for (std::size_t t = 0; t < 4; ++t)
        os << "count " << to_string(kIndicatorTypes[t]) << ' ' << c.per_type[t] << '\n';
    for (std::size_t r = 0; r < c.regions; ++r) {
        os << "omega " << r;
        for (std::size_t t = 0; t < 4; ++t)
            os << ' ' << detail::format_double(meta.omega[r][t]);
        os << '\n';
    }
    if (meta.marker_column)
        os << "marker " << table.schema[*meta.marker_column].name << '\n';
    for (std::size_t j = 0; j < table.K(); ++j)
        os << "coef " << table.schema[j].name << ' ' << detail::format_double(meta.linear[j]) << '\n';
    for (std::size_t t = 0; t < 4; ++t)
        for (const auto& p : meta.pairs[t])
            os << "pair " << to_string(kIndicatorTypes[t]) << ' ' << table.schema[p.a].name << ' '
               << table.schema[p.b].name << ' ' << detail::format_double(p.coef) << '\n';
    for (std::size_t i = 0; i < meta.city_ids.size(); ++i)
        os << "region " << meta.city_ids[i] << ' ' << meta.city_region[i] << '\n';
}

/// Parses the listing written by write_synth_metadata against the table's schema.
inline SynthMetadata read_synth_metadata(const std::string& path, const IndicatorTable& table)
{
    std::ifstream is(path);
    if (!is)
        throw LoadError("cannot open metadata file '" + path + "'");
    SynthMetadata meta;
    meta.linear.assign(table.K(), 0.0);
    auto column_index = [&](const std::string& name) {
        for (std::size_t j = 0; j < table.K(); ++j)
            if (table.schema[j].name == name)
                return j;
        throw LoadError(path + ": unknown column '" + name + "'");
    };
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "seed") {
            ls >> meta.config.seed;
        } else if (key == "sigma") {
            ls >> meta.config.sigma;
        } else if (key == "cities") {
            ls >> meta.config.cities;
        } else if (key == "years") {
            meta.config.years.clear();
            for (int y; ls >> y;)
                meta.config.years.push_back(y);
        } else if (key == "regions") {
            ls >> meta.config.regions;
        } else if (key == "pairwise") {
            int v = 0;
            ls >> v;
            meta.config.pairwise = v != 0;
        } else if (key == "count") {
            std::string type;
            std::size_t n = 0;
            ls >> type >> n;
            auto t = parse_indicator_type(type);
            if (!t)
                throw LoadError(path + ": unknown type '" + type + "'");
            meta.config.per_type[static_cast<std::size_t>(*t)] = n;
        } else if (key == "omega") {
            std::size_t r = 0;
            ls >> r;
            if (r >= 4)
                throw LoadError(path + ": region index out of range");
            for (std::size_t t = 0; t < 4; ++t)
                ls >> meta.omega[r][t];
        } else if (key == "marker") {
            std::string name;
            ls >> name;
            meta.marker_column = column_index(name);
        } else if (key == "coef") {
            std::string name;
            double v = 0.0;
            ls >> name >> v;
            meta.linear[column_index(name)] = v;
        } else if (key == "pair") {
            std::string type, a, b;
            double v = 0.0;
            ls >> type >> a >> b >> v;
            auto t = parse_indicator_type(type);
            if (!t)
                throw LoadError(path + ": unknown type '" + type + "'");
            meta.pairs[static_cast<std::size_t>(*t)].push_back({column_index(a), column_index(b), v});
        } else if (key == "region") {
            std::string city;
            std::size_t r = 0;
            ls >> city >> r;
            meta.city_ids.push_back(city);
            meta.city_region.push_back(r);
        } else if (!key.empty()) {
            throw LoadError(path + ": unknown key '" + key + "'");
        }
        if (ls.fail() && !ls.eof())
            throw LoadError(path + ": malformed line '" + line + "'");
    }
    return meta;
}

} // namespace tljd
