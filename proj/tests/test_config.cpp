// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#include <taqdit/config.hpp>

#include <gtest/gtest.h>

#include <sstream>

namespace taqdit {
namespace {

ProblemConfig parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_config(in);
}

std::string failing_key(const std::string& text)
{
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.key();
    }
    ADD_FAILURE() << "no ConfigError for: " << text;
    return {};
}

TEST(Config, Defaults)
{
    const ProblemConfig c = parse("");
    EXPECT_EQ(c.d, 64u);
    EXPECT_EQ(c.tokens, 64u);
    EXPECT_EQ(c.blocks, 2u);
    EXPECT_EQ(c.timesteps, 25u);
    EXPECT_EQ(c.per_step, 32u);
    EXPECT_FALSE(c.seed.has_value());
}

TEST(Config, ParsesEveryKey)
{
    const ProblemConfig c = parse("# problem size\n"
                                  "d = 32\n"
                                  "  tokens=16   # inline comment\n"
                                  "\n"
                                  "blocks = 3\r\n"
                                  "timesteps = 1\n"
                                  "per_step = 4\n"
                                  "seed = 18446744073709551615\n");
    EXPECT_EQ(c.d, 32u);
    EXPECT_EQ(c.tokens, 16u);
    EXPECT_EQ(c.blocks, 3u);
    EXPECT_EQ(c.timesteps, 1u);
    EXPECT_EQ(c.per_step, 4u);
    EXPECT_EQ(c.seed, 18446744073709551615ull);
}

TEST(Config, UnknownKeyNamesTheKey)
{
    EXPECT_EQ(failing_key("bogus = 1\n"), "bogus");
    try {
        parse("d = 8\nbogus = 1\n");
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("unknown config key 'bogus'"), std::string::npos);
    }
}

TEST(Config, BadValuesNameTheKey)
{
    EXPECT_EQ(failing_key("d = -1"), "d");
    EXPECT_EQ(failing_key("tokens = 3.5"), "tokens");
    EXPECT_EQ(failing_key("seed = abc"), "seed");
    EXPECT_EQ(failing_key("blocks ="), "blocks");
    EXPECT_EQ(failing_key("per_step = 0"), "per_step");
    EXPECT_EQ(failing_key("timesteps = 0"), "timesteps");
    EXPECT_EQ(failing_key("seed = 99999999999999999999"), "seed");
    EXPECT_THROW(parse("just words"), ConfigError);
}

TEST(Config, SeedZeroIsAllowed)
{
    EXPECT_EQ(parse("seed = 0").seed, 0u);
}

TEST(Config, GeneratorCarriesSizesAndSeed)
{
    const ProblemConfig c = parse("d = 8\ntokens = 4\ntimesteps = 3\nper_step = 2\n");
    const GeneratorConfig g = c.generator(7);
    EXPECT_EQ(g.width, 8u);
    EXPECT_EQ(g.tokens, 4u);
    EXPECT_EQ(g.timesteps, 3u);
    EXPECT_EQ(g.per_step, 2u);
    EXPECT_EQ(g.seed, 7u);
    EXPECT_EQ(parse("seed = 3").generator(7).seed, 3u);
}

TEST(Config, MissingFileIsAnIoError)
{
    try {
        load_config("/nonexistent/dir/problem.cfg");
        ADD_FAILURE();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.kind(), FormatError::Kind::Io);
    }
}

} // namespace
} // namespace taqdit
