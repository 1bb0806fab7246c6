// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <taqdit/toy_dit.hpp>
#include <taqdit/transforms.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace taqdit {
namespace {

using testing::Gen;
using testing::naive_matmul;

GeneratorConfig small_config(std::uint64_t seed = 0)
{
    GeneratorConfig g;
    g.seed = seed;
    g.timesteps = 5;
    g.per_step = 4;
    return g;
}

TEST(ToyDiT, DefaultCalibrationShape)
{
    const CalibrationSet set = generate_calibration(GeneratorConfig{});
    EXPECT_EQ(set.samples.size(), 25u * 32u);
    EXPECT_EQ(set.timestep_tags().size(), 25u);
    EXPECT_EQ(set.timestep_tags().front(), 0u);
    EXPECT_EQ(set.timestep_tags().back(), 99u);
    for (const auto& s : set.samples) {
        ASSERT_EQ(s.input.rows(), 64u);
        ASSERT_EQ(s.input.cols(), 64u);
    }
}

TEST(ToyDiT, SeededDeterminism)
{
    EXPECT_EQ(generate_calibration(small_config(3)), generate_calibration(small_config(3)));
    EXPECT_NE(generate_calibration(small_config(3)), generate_calibration(small_config(4)));
    const ToyDiTModel a = make_toy_model(small_config(3), 2), b = make_toy_model(small_config(3), 2);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(a.blocks[i].pf_in.weight, b.blocks[i].pf_in.weight);
        EXPECT_EQ(a.blocks[i].norm1, b.blocks[i].norm1);
    }
}

TEST(ToyDiT, SingleTimestepRegime)
{
    GeneratorConfig g = small_config();
    g.timesteps = 1;
    const CalibrationSet set = generate_calibration(g);
    EXPECT_EQ(set.timestep_tags(), (std::vector<std::uint32_t>{0}));
    EXPECT_EQ(set.samples.size(), g.per_step);
}

TEST(ToyDiT, RejectsEmptyConfig)
{
    GeneratorConfig g = small_config();
    g.timesteps = 0;
    EXPECT_THROW(generate_calibration(g), InvalidArgument);
    g = small_config();
    g.width = 0;
    EXPECT_THROW(generate_calibration(g), InvalidArgument);
}

TEST(ToyDiT, UniformTimesteps)
{
    EXPECT_EQ(uniform_timesteps(5, 100), (std::vector<std::uint32_t>{0, 25, 50, 74, 99}));
    EXPECT_EQ(uniform_timesteps(1, 100), (std::vector<std::uint32_t>{0}));
}

TEST(ToyDiT, RangeGrowsWithTimestep)
{
    const CalibrationSet set = generate_calibration(small_config());
    double first = 0.0, last = 0.0;
    for (const auto& s : set.samples) {
        double m = 0.0;
        for (double v : s.input.values())
            m = std::max(m, std::abs(v));
        if (s.timestep == 0)
            first = std::max(first, m);
        if (s.timestep == 99)
            last = std::max(last, m);
    }
    EXPECT_GT(last, 2.0 * first);
}

TEST(ToyDiT, SoftmaxRowsSumToOne)
{
    Gen g(1);
    const Tensor p = softmax_rows(g.tensor(6, 9, 30.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (double v : p.row(r)) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

// d = 2, T = 1: attention over a single token returns v itself.
TEST(ToyDiT, HandTraceTinyBlock)
{
    ToyDiTBlock b;
    b.norm1 = {{2.0, 1.0}, {0.0, -1.0}};
    b.norm2 = {{1.0, 0.5}, {0.5, 0.0}};
    auto lin = [](std::initializer_list<std::initializer_list<double>> w,
                  std::vector<double> bias) { return LinearLayer{Tensor::from_rows(w), Tensor::vector(bias)}; };
    b.query = lin({{1, 0}, {0, 1}}, {0, 0});
    b.key = lin({{0, 1}, {1, 0}}, {0, 0});
    b.value = lin({{1, 1}, {0, 2}}, {0.5, 0});
    b.out_proj = lin({{1, 0}, {0, -1}}, {0, 0.25});
    b.pf_in = lin({{1, 0, -1, 2}, {0, 1, 1, 0}}, {0, 0, 0, -1});
    b.pf_out = lin({{1, 0}, {0, 1}, {1, 1}, {-1, 0}}, {0.1, 0});

    const double x0 = 0.5, x1 = -1.0;
    const double a0 = 2 * x0, a1 = x1 - 1;                 // norm1
    const double v0 = a0 + 0.5, v1 = a0 + 2 * a1;          // value
    const double m0 = x0 + v0, m1 = x1 - v1 + 0.25;        // residual after out_proj
    const double n0 = m0 + 0.5, n1 = 0.5 * m1;             // norm2
    const double h[4] = {gelu(n0), gelu(n1), gelu(-n0 + n1), gelu(2 * n0 - 1)};
    const double y0 = m0 + h[0] + h[2] - h[3] + 0.1;
    const double y1 = m1 + h[1] + h[2];

    const Tensor out = block_forward(b, Tensor::from_rows({{x0, x1}}));
    EXPECT_NEAR(out.at(0, 0), y0, 1e-14);
    EXPECT_NEAR(out.at(0, 1), y1, 1e-14);
}

TEST(ToyDiT, BlockMatchesComposedOps)
{
    Gen g(2);
    const GeneratorConfig cfg = small_config(2);
    const ToyDiTModel m = make_toy_model(cfg, 1);
    const ToyDiTBlock& b = m.blocks[0];
    const Tensor x = g.tensor(64, 64);
    const Tensor a = b.norm1.apply(x);
    auto lin = [](const LinearLayer& l, const Tensor& t) {
        return add_row_vector(naive_matmul(t, l.weight), l.bias.values());
    };
    const Tensor q = lin(b.query, a), k = lin(b.key, a), v = lin(b.value, a);
    Tensor s = naive_matmul(q, transpose(k));
    for (double& e : s.values())
        e /= 8.0;
    const Tensor mid = add(x, lin(b.out_proj, naive_matmul(softmax_rows(s), v)));
    const Tensor want = add(mid, lin(b.pf_out, gelu(lin(b.pf_in, b.norm2.apply(mid)))));
    EXPECT_LE(max_abs_difference(block_forward(b, x), want), 1e-10);
}

TEST(ToyDiT, PostGeluIsAsymmetric)
{
    const GeneratorConfig cfg = small_config();
    const CalibrationSet set = generate_calibration(cfg);
    const ToyDiTModel m = make_toy_model(cfg, 2);
    for (std::size_t blk = 0; blk < 2; ++blk) {
        std::size_t neg = 0, total = 0;
        double lo = 0.0;
        for (const auto& c : post_gelu_capture(m, set, blk)) {
            for (double v : c.values.values()) {
                neg += v < 0.0;
                lo = std::min(lo, v);
            }
            total += c.values.size();
        }
        EXPECT_GT(static_cast<double>(neg) / static_cast<double>(total), 0.5) << blk;
        EXPECT_GE(lo, -0.17) << blk;
    }
}

TEST(ToyDiT, OutliersSurfaceInTargetChannels)
{
    const GeneratorConfig cfg = small_config(1);
    const OutlierLayout layout = make_outlier_layout(cfg);
    ASSERT_EQ(layout.size(), 5u); // 2% of 256
    EXPECT_EQ(layout.always_on.size(), 5u);
    const CalibrationSet set = generate_calibration(cfg);
    const ToyDiTModel m = make_toy_model(cfg, 1);
    std::vector<Tensor> parts;
    for (auto& c : post_gelu_capture(m, set, 0))
        parts.push_back(std::move(c.values));
    const auto ranges = channel_ranges(concat_rows(parts));
    std::set<std::size_t> special(layout.targets.begin(), layout.targets.end());
    special.insert(layout.always_on.begin(), layout.always_on.end());
    double target_min = 1e300, normal_max = 0.0;
    for (std::size_t t : layout.targets)
        target_min = std::min(target_min, ranges[t]);
    for (std::size_t c = 0; c < ranges.size(); ++c)
        if (!special.count(c))
            normal_max = std::max(normal_max, ranges[c]);
    EXPECT_GT(target_min, 2.0 * normal_max);
}

TEST(ToyDiT, LayoutChannelsAreDisjoint)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const OutlierLayout l = make_outlier_layout(small_config(seed));
        std::set<std::size_t> carriers(l.carriers.begin(), l.carriers.end());
        std::set<std::size_t> hidden(l.targets.begin(), l.targets.end());
        EXPECT_EQ(carriers.size(), l.size());
        for (std::size_t a : l.always_on)
            EXPECT_TRUE(hidden.insert(a).second);
        for (double gain : l.gains)
            EXPECT_GE(gain, 8.0);
    }
}

} // namespace
} // namespace taqdit
