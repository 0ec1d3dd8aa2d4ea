#pragma once

// Checkpoint container.
//
//   TLJD-CHECKPOINT
//   format_version <int>
//   rng_seed <uint64>
//   meta <key> <value until end of line>      (zero or more)
//   entries <count>
//   entry <name> <rank> <dim0> ... <dimR-1>   (count lines)
//   payload
//   <little-endian float64 values of every entry, in header order>

#include "tljd/errors.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tensor.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace tljd {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointFormatVersion;
    std::uint64_t rng_seed = 0;
    std::vector<std::pair<std::string, std::string>> metadata;
    std::vector<std::pair<std::string, Tensor>> entries;

    [[nodiscard]] const std::string* find_meta(const std::string& key) const
    {
        for (const auto& [k, v] : metadata)
            if (k == key)
                return &v;
        return nullptr;
    }
    [[nodiscard]] const Tensor* find_entry(const std::string& name) const
    {
        for (const auto& [n, t] : entries)
            if (n == name)
                return &t;
        return nullptr;
    }
};

namespace detail {

inline void write_le_f64(std::ostream& os, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i)
        bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    os.write(bytes, 8);
}

inline double read_le_f64(std::istream& is)
{
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8))
        throw LoadError("checkpoint payload truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

inline std::string expect_line(std::istream& is, const char* what)
{
    std::string line;
    if (!std::getline(is, line))
        throw LoadError(std::string("checkpoint header truncated, expected ") + what);
    return line;
}

} // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt)
{
    os << "TLJD-CHECKPOINT\n";
    os << "format_version " << ckpt.format_version << '\n';
    os << "rng_seed " << ckpt.rng_seed << '\n';
    for (const auto& [key, value] : ckpt.metadata) {
        if (key.find_first_of(" \t\n") != std::string::npos || value.find('\n') != std::string::npos)
            throw ConfigError("checkpoint metadata '" + key + "' must be a single token key and one-line value");
        os << "meta " << key << ' ' << value << '\n';
    }
    os << "entries " << ckpt.entries.size() << '\n';
    for (const auto& [name, t] : ckpt.entries) {
        os << "entry " << name << ' ' << t.rank();
        for (std::size_t dim : t.shape())
            os << ' ' << dim;
        os << '\n';
    }
    os << "payload\n";
    for (const auto& [_, t] : ckpt.entries)
        for (double v : t.data())
            detail::write_le_f64(os, v);
}

inline Checkpoint read_checkpoint(std::istream& is)
{
    if (detail::expect_line(is, "magic") != "TLJD-CHECKPOINT")
        throw LoadError("not a checkpoint file (bad magic line)");
    Checkpoint ckpt;
    {
        std::istringstream ls(detail::expect_line(is, "format_version"));
        std::string key;
        if (!(ls >> key >> ckpt.format_version) || key != "format_version")
            throw LoadError("checkpoint: malformed format_version line");
        if (ckpt.format_version != kCheckpointFormatVersion)
            throw CompatibilityError("checkpoint format version " + std::to_string(ckpt.format_version) +
                                     " is not supported (expected " + std::to_string(kCheckpointFormatVersion) +
                                     ")");
    }
    {
        std::istringstream ls(detail::expect_line(is, "rng_seed"));
        std::string key;
        if (!(ls >> key >> ckpt.rng_seed) || key != "rng_seed")
            throw LoadError("checkpoint: malformed rng_seed line");
    }
    std::size_t count = 0;
    for (;;) {
        std::string line = detail::expect_line(is, "entries");
        if (line.rfind("meta ", 0) == 0) {
            const auto space = line.find(' ', 5);
            if (space == std::string::npos)
                throw LoadError("checkpoint: malformed meta line");
            ckpt.metadata.emplace_back(line.substr(5, space - 5), line.substr(space + 1));
            continue;
        }
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key >> count) || key != "entries")
            throw LoadError("checkpoint: expected entries line, got '" + line + "'");
        break;
    }
    std::vector<std::pair<std::string, Shape>> layout;
    layout.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream ls(detail::expect_line(is, "entry"));
        std::string key, name;
        std::size_t rank = 0;
        if (!(ls >> key >> name >> rank) || key != "entry" || rank == 0)
            throw LoadError("checkpoint: malformed entry line " + std::to_string(i));
        Shape shape(rank);
        for (auto& dim : shape)
            if (!(ls >> dim))
                throw LoadError("checkpoint: entry '" + name + "' has truncated shape");
        layout.emplace_back(std::move(name), std::move(shape));
    }
    if (detail::expect_line(is, "payload") != "payload")
        throw LoadError("checkpoint: missing payload marker");
    for (auto& [name, shape] : layout) {
        Tensor t(shape);
        for (double& v : t.data())
            v = detail::read_le_f64(is);
        ckpt.entries.emplace_back(std::move(name), std::move(t));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw LoadError("checkpoint: trailing bytes after payload");
    return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw LoadError("cannot open '" + path + "' for writing");
    write_checkpoint(os, ckpt);
    if (!os)
        throw LoadError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw LoadError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(is);
}

inline Checkpoint to_checkpoint(const ParamStore& store)
{
    Checkpoint ckpt;
    ckpt.rng_seed = store.seed();
    for (const auto& name : store.names())
        ckpt.entries.emplace_back(name, store.value(name));
    return ckpt;
}

/// Loads values for every parameter in `store` from `ckpt`. Shapes must agree.
inline void restore_params(ParamStore& store, const Checkpoint& ckpt)
{
    for (const auto& name : store.names()) {
        const Tensor* t = ckpt.find_entry(name);
        if (t == nullptr)
            throw CompatibilityError("checkpoint is missing parameter '" + name + "'");
        if (t->shape() != store.value(name).shape())
            throw CompatibilityError("parameter '" + name + "' has shape " + shape_to_string(t->shape()) +
                                     " in checkpoint but " + shape_to_string(store.value(name).shape()) +
                                     " in model");
        store.value(name) = *t;
    }
}

} // namespace tljd
