// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_CONFIG_HPP_
#define TAQDIT_CONFIG_HPP_

#include <taqdit/error.hpp>
#include <taqdit/toy_dit.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>

namespace taqdit {

/// Unknown key or unparsable value in a problem config.
class ConfigError : public InvalidArgument {
public:
    ConfigError(std::string key, const std::string& what)
        : InvalidArgument(what), key_(std::move(key))
    {
    }

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Flat key=value description of the toy problem.
///
///     # comments and blank lines are ignored
///     d = 64
///     tokens = 64
///     blocks = 2
///     timesteps = 25
///     per_step = 32
///     seed = 0
struct ProblemConfig {
    std::size_t d = 64;
    std::size_t tokens = 64;
    std::size_t blocks = 2;
    std::size_t timesteps = 25;
    std::size_t per_step = 32;
    std::optional<std::uint64_t> seed;

    GeneratorConfig generator(std::uint64_t fallback_seed = 0) const
    {
        GeneratorConfig g;
        g.width = d;
        g.tokens = tokens;
        g.timesteps = timesteps;
        g.per_step = per_step;
        g.seed = seed.value_or(fallback_seed);
        return g;
    }
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_unsigned(std::string_view key, std::string_view v)
{
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ConfigError(std::string(key), "config key '" + std::string(key) +
                                                "' needs a non-negative integer, got '" +
                                                std::string(v) + "'");
    return out;
}

} // namespace detail

inline ProblemConfig parse_config(std::istream& in)
{
    ProblemConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos)
            s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty())
            continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(std::string(s), "line " + std::to_string(lineno) +
                                                  " is not of the form key = value");
        const std::string_view key = detail::trim(s.substr(0, eq));
        const std::string_view value = detail::trim(s.substr(eq + 1));
        const auto positive = [&](std::size_t& field) {
            const std::uint64_t v = detail::parse_unsigned(key, value);
            if (v == 0)
                throw ConfigError(std::string(key), "config key '" + std::string(key) +
                                                        "' must be at least 1");
            field = static_cast<std::size_t>(v);
        };
        if (key == "d")
            positive(cfg.d);
        else if (key == "tokens")
            positive(cfg.tokens);
        else if (key == "blocks")
            positive(cfg.blocks);
        else if (key == "timesteps")
            positive(cfg.timesteps);
        else if (key == "per_step")
            positive(cfg.per_step);
        else if (key == "seed")
            cfg.seed = detail::parse_unsigned(key, value);
        else
            throw ConfigError(std::string(key), "unknown config key '" + std::string(key) + "'");
    }
    return cfg;
}

inline ProblemConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError(FormatError::Kind::Io, "cannot open config " + path);
    return parse_config(in);
}

} // namespace taqdit

#endif // TAQDIT_CONFIG_HPP_
