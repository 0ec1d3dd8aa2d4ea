#pragma once

#include "tljd/errors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tljd {

/// The four indicator families, in the fixed order used by every report.
enum class IndicatorType { PJ = 0, DJ = 1, JE = 2, JC = 3 };

inline constexpr std::array<IndicatorType, 4> kIndicatorTypes{IndicatorType::PJ, IndicatorType::DJ,
                                                               IndicatorType::JE, IndicatorType::JC};

inline const char* to_string(IndicatorType t)
{
    switch (t) {
    case IndicatorType::PJ: return "PJ";
    case IndicatorType::DJ: return "DJ";
    case IndicatorType::JE: return "JE";
    case IndicatorType::JC: return "JC";
    }
    return "?";
}

inline std::optional<IndicatorType> parse_indicator_type(std::string_view s)
{
    for (auto t : kIndicatorTypes)
        if (s == to_string(t))
            return t;
    return std::nullopt;
}

struct IndicatorColumn {
    std::string name;
    IndicatorType type;

    friend bool operator==(const IndicatorColumn&, const IndicatorColumn&) = default;
};

struct SampleRow {
    std::string city_id;
    int year = 0;
    std::vector<double> indicators;
    double fdi = 0.0;

    friend bool operator==(const SampleRow&, const SampleRow&) = default;
};

/// City x year indicator table. Schema order is the canonical column order.
struct IndicatorTable {
    std::vector<IndicatorColumn> schema;
    std::vector<SampleRow> rows;

    [[nodiscard]] std::size_t K() const noexcept { return schema.size(); }

    /// Throws LoadError when an invariant is broken.
    void validate() const
    {
        std::array<std::size_t, 4> per_type{};
        std::set<std::string> names;
        for (const auto& c : schema) {
            per_type[static_cast<std::size_t>(c.type)]++;
            if (!names.insert(c.name).second)
                throw LoadError("duplicate indicator column '" + c.name + "'");
        }
        for (auto t : kIndicatorTypes)
            if (per_type[static_cast<std::size_t>(t)] == 0)
                throw LoadError(std::string("indicator type ") + to_string(t) + " has no columns");
        std::set<std::pair<std::string, int>> keys;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (r.indicators.size() != K())
                throw LoadError("row " + std::to_string(i) + " has " + std::to_string(r.indicators.size()) +
                                " indicators, expected " + std::to_string(K()));
            for (std::size_t j = 0; j < K(); ++j)
                if (!std::isfinite(r.indicators[j]))
                    throw LoadError("row " + std::to_string(i) + " column '" + schema[j].name + "' is not finite");
            if (!std::isfinite(r.fdi))
                throw LoadError("row " + std::to_string(i) + " fdi is not finite");
            if (!keys.emplace(r.city_id, r.year).second)
                throw LoadError("duplicate (city, year) (" + r.city_id + ", " + std::to_string(r.year) + ") at row " +
                                std::to_string(i));
        }
    }

    [[nodiscard]] std::vector<int> years() const
    {
        std::set<int> ys;
        for (const auto& r : rows)
            ys.insert(r.year);
        return {ys.begin(), ys.end()};
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ','))
        out.push_back(field);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

inline std::string trim_cr(std::string s)
{
    if (!s.empty() && s.back() == '\r')
        s.pop_back();
    return s;
}

inline std::optional<double> parse_double(std::string_view s)
{
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+')
        ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || first == last || !std::isfinite(v))
        return std::nullopt;
    return v;
}

inline std::optional<int> parse_int(std::string_view s)
{
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        return std::nullopt;
    return v;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace detail

inline std::vector<IndicatorColumn> load_schema(const std::string& schema_path)
{
    std::ifstream is(schema_path);
    if (!is)
        throw LoadError("cannot open schema file '" + schema_path + "'");
    std::string line;
    if (!std::getline(is, line) || detail::trim_cr(line) != "indicator,type")
        throw LoadError(schema_path + ": header must be 'indicator,type'");
    std::vector<IndicatorColumn> schema;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        line = detail::trim_cr(line);
        if (line.empty())
            continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2)
            throw LoadError(schema_path + ":" + std::to_string(lineno) + ": expected 2 fields");
        auto type = parse_indicator_type(fields[1]);
        if (!type)
            throw LoadError(schema_path + ":" + std::to_string(lineno) + ": unknown type '" + fields[1] +
                            "' for column '" + fields[0] + "'");
        schema.push_back({fields[0], *type});
    }
    return schema;
}

/// Reads the data CSV and reorders its indicator columns into schema order.
inline IndicatorTable load_table(const std::string& data_path, std::vector<IndicatorColumn> schema)
{
    IndicatorTable table;
    table.schema = std::move(schema);

    std::ifstream is(data_path);
    if (!is)
        throw LoadError("cannot open data file '" + data_path + "'");
    std::string line;
    if (!std::getline(is, line))
        throw LoadError(data_path + ": empty file");
    const auto header = detail::split_csv_line(detail::trim_cr(line));
    if (header.size() < 3 || header.front() != "city_id" || header[1] != "year" || header.back() != "fdi")
        throw LoadError(data_path + ": header must be 'city_id,year,<indicators...>,fdi'");

    std::map<std::string, std::size_t> data_col;
    for (std::size_t c = 2; c + 1 < header.size(); ++c)
        if (!data_col.emplace(header[c], c).second)
            throw LoadError(data_path + ": duplicate column '" + header[c] + "'");
    std::vector<std::size_t> source(table.K());
    for (std::size_t j = 0; j < table.K(); ++j) {
        auto it = data_col.find(table.schema[j].name);
        if (it == data_col.end())
            throw LoadError(data_path + ": missing column '" + table.schema[j].name + "' listed in schema");
        source[j] = it->second;
        data_col.erase(it);
    }
    if (!data_col.empty())
        throw LoadError(data_path + ": column '" + data_col.begin()->first + "' has no schema entry");

    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        line = detail::trim_cr(line);
        if (line.empty())
            continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = data_path + ":" + std::to_string(lineno);
        if (fields.size() != header.size())
            throw LoadError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        SampleRow row;
        row.city_id = fields[0];
        auto year = detail::parse_int(fields[1]);
        if (!year)
            throw LoadError(where + ": column 'year' is not an integer: '" + fields[1] + "'");
        row.year = *year;
        row.indicators.resize(table.K());
        for (std::size_t j = 0; j < table.K(); ++j) {
            auto v = detail::parse_double(fields[source[j]]);
            if (!v)
                throw LoadError(where + ": column '" + table.schema[j].name + "' is not numeric: '" +
                                fields[source[j]] + "'");
            row.indicators[j] = *v;
        }
        auto fdi = detail::parse_double(fields.back());
        if (!fdi)
            throw LoadError(where + ": column 'fdi' is not numeric: '" + fields.back() + "'");
        row.fdi = *fdi;
        table.rows.push_back(std::move(row));
    }
    table.validate();
    return table;
}

inline IndicatorTable load_table(const std::string& data_path, const std::string& schema_path)
{
    return load_table(data_path, load_schema(schema_path));
}

inline void write_schema(const std::vector<IndicatorColumn>& schema, const std::string& schema_path)
{
    std::ofstream os(schema_path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw LoadError("cannot open '" + schema_path + "' for writing");
    os << "indicator,type\n";
    for (const auto& c : schema)
        os << c.name << ',' << to_string(c.type) << '\n';
}

inline void write_table(const IndicatorTable& table, const std::string& data_path, const std::string& schema_path)
{
    write_schema(table.schema, schema_path);
    std::ofstream os(data_path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw LoadError("cannot open '" + data_path + "' for writing");
    os << "city_id,year";
    for (const auto& c : table.schema)
        os << ',' << c.name;
    os << ",fdi\n";
    for (const auto& r : table.rows) {
        os << r.city_id << ',' << r.year;
        for (double v : r.indicators)
            os << ',' << detail::format_double(v);
        os << ',' << detail::format_double(r.fdi) << '\n';
    }
    if (!os)
        throw LoadError("failed writing '" + data_path + "'");
}

/// Per-column min-max scaler fitted on training rows.
struct ColumnScaler {
    std::vector<double> min;
    std::vector<double> max;

    [[nodiscard]] double scale(std::size_t j, double x) const
    {
        const double range = max[j] - min[j];
        if (!(range > 0.0))
            return 0.0;
        return std::clamp((x - min[j]) / range, 0.0, 1.0);
    }

    [[nodiscard]] std::vector<double> apply(const std::vector<double>& x) const
    {
        if (x.size() != min.size())
            throw InputError("scaler expects " + std::to_string(min.size()) + " values, got " +
                             std::to_string(x.size()));
        std::vector<double> out(x.size());
        for (std::size_t j = 0; j < x.size(); ++j)
            out[j] = scale(j, x[j]);
        return out;
    }
};

inline ColumnScaler fit_scaler(const IndicatorTable& table, const std::vector<std::size_t>& train_indices)
{
    if (train_indices.empty())
        throw ConfigError("fit_scaler: empty training set");
    ColumnScaler s;
    s.min.assign(table.K(), 0.0);
    s.max.assign(table.K(), 0.0);
    bool first = true;
    for (std::size_t i : train_indices) {
        const auto& x = table.rows.at(i).indicators;
        for (std::size_t j = 0; j < table.K(); ++j) {
            if (first || x[j] < s.min[j])
                s.min[j] = x[j];
            if (first || x[j] > s.max[j])
                s.max[j] = x[j];
        }
        first = false;
    }
    return s;
}

inline std::vector<std::vector<double>> apply_scaler(const ColumnScaler& scaler, const std::vector<SampleRow>& rows)
{
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows)
        out.push_back(scaler.apply(r.indicators));
    return out;
}

enum class ProtocolKind { ccp_single_year, ccp_mixed_year, ctp };

struct Protocol {
    ProtocolKind kind = ProtocolKind::ccp_mixed_year;
    int year = 0; ///< only meaningful for ccp_single_year

    static Protocol ccp_single_year(int y) { return {ProtocolKind::ccp_single_year, y}; }
    static Protocol ccp_mixed_year() { return {ProtocolKind::ccp_mixed_year, 0}; }
    static Protocol ctp() { return {ProtocolKind::ctp, 0}; }

    friend bool operator==(const Protocol&, const Protocol&) = default;
};

inline std::string to_string(const Protocol& p)
{
    switch (p.kind) {
    case ProtocolKind::ccp_single_year: return "ccp_single_year(" + std::to_string(p.year) + ")";
    case ProtocolKind::ccp_mixed_year: return "ccp_mixed_year";
    case ProtocolKind::ctp: return "ctp";
    }
    return "?";
}

struct SplitPlan {
    Protocol protocol;
    std::uint64_t seed = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Train/validation/test assignment for the CCP (3:1:1 on shuffled rows) and
/// CTP (final year as test, earlier years 3:1) protocols.
inline SplitPlan make_split(const IndicatorTable& table, Protocol protocol, std::uint64_t seed)
{
    SplitPlan plan;
    plan.protocol = protocol;
    plan.seed = seed;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> pool;

    auto round_div = [](std::size_t n, std::size_t d) { return (2 * n + d) / (2 * d); };

    switch (protocol.kind) {
    case ProtocolKind::ccp_single_year:
    case ProtocolKind::ccp_mixed_year: {
        for (std::size_t i = 0; i < table.rows.size(); ++i)
            if (protocol.kind == ProtocolKind::ccp_mixed_year || table.rows[i].year == protocol.year)
                pool.push_back(i);
        if (pool.size() < 3)
            throw ProtocolError(to_string(protocol) + ": needs at least 3 eligible rows, table has " +
                                std::to_string(pool.size()));
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::size_t n = pool.size();
        const std::size_t n_test = std::max<std::size_t>(1, round_div(n, 5));
        const std::size_t n_val = std::max<std::size_t>(1, round_div(n, 5));
        const std::size_t n_train = n - n_test - n_val;
        plan.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
        plan.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train),
                        pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        plan.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), pool.end());
        break;
    }
    case ProtocolKind::ctp: {
        const auto years = table.years();
        if (years.size() < 2)
            throw ProtocolError("ctp: needs at least 2 distinct years, table has " + std::to_string(years.size()));
        const int last = years.back();
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            if (table.rows[i].year == last)
                plan.test.push_back(i);
            else
                pool.push_back(i);
        }
        if (pool.size() < 2)
            throw ProtocolError("ctp: needs at least 2 rows before the final year");
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::size_t n = pool.size();
        const std::size_t n_val = std::max<std::size_t>(1, round_div(n, 4));
        const std::size_t n_train = n - n_val;
        plan.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
        plan.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
        break;
    }
    }
    return plan;
}

} // namespace tljd
