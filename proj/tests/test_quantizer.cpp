// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <taqdit/quantizer.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace taqdit {
namespace {

using testing::Gen;
using testing::relative_error;

constexpr Granularity kAll[] = {Granularity::TensorWise, Granularity::TokenWise,
                                Granularity::WeightChannelWise, Granularity::InputChannelWise};

TEST(Quantizer, HandCalibration)
{
    const Tensor x = Tensor::from_rows({{-1.0, 1.0}});
    const QuantParams p = calibrate_params(x, 8, Granularity::TensorWise);
    ASSERT_EQ(p.group_count(), 1u);
    EXPECT_DOUBLE_EQ(p.scales[0], 2.0 / 255.0);
    EXPECT_EQ(p.zero_points[0], 128); // round(127.5) goes away from zero
    const QuantizedTensor q = quantize(x, p);
    EXPECT_EQ(q.codes[0], 0);
    EXPECT_EQ(q.codes[1], 255);
}

TEST(Quantizer, RoundHalfAwayFromZero)
{
    EXPECT_EQ(round_half_away(0.5), 1.0);
    EXPECT_EQ(round_half_away(-0.5), -1.0);
    EXPECT_EQ(round_half_away(2.5), 3.0);
    EXPECT_EQ(round_half_away(-2.4), -2.0);
}

TEST(Quantizer, GroupCounts)
{
    Gen g(1);
    const Tensor x = g.tensor(5, 3);
    EXPECT_EQ(calibrate_params(x, 8, Granularity::TensorWise).group_count(), 1u);
    EXPECT_EQ(calibrate_params(x, 8, Granularity::TokenWise).group_count(), 5u);
    EXPECT_EQ(calibrate_params(x, 8, Granularity::WeightChannelWise).group_count(), 3u);
    EXPECT_EQ(calibrate_params(x, 8, Granularity::InputChannelWise).group_count(), 3u);
}

TEST(Quantizer, DegenerateGroup)
{
    const Tensor x(3, 2, 0.75);
    const QuantParams p = calibrate_params(x, 4, Granularity::TensorWise);
    EXPECT_EQ(p.scales[0], kScaleEpsilon);
    EXPECT_EQ(p.zero_points[0], 0);
    for (std::int64_t c : quantize(x, p).codes)
        EXPECT_EQ(c, p.max_code());
}

TEST(Quantizer, RejectsBadInput)
{
    EXPECT_THROW(calibrate_params(Tensor(), 8, Granularity::TensorWise), InvalidArgument);
    EXPECT_THROW(calibrate_params(Tensor(2, 2, 1.0), 1, Granularity::TensorWise), InvalidArgument);
    EXPECT_THROW(calibrate_params(Tensor(2, 2, 1.0), 64, Granularity::TensorWise), InvalidArgument);
    QuantParams p = calibrate_params(Tensor::from_rows({{0, 1}, {2, 3}}), 8, Granularity::TokenWise);
    EXPECT_THROW(quantize(Tensor(3, 2), p), DimensionError);
    p.scales[0] = 0.0;
    EXPECT_THROW(quantize(Tensor(2, 2), p), InvalidArgument);
}

// Property: every in-range element comes back within half a step.
TEST(Quantizer, RoundTripWithinHalfStep)
{
    Gen g(2);
    for (int trial = 0; trial < 200; ++trial) {
        const Granularity gran = kAll[trial % 4];
        const int bits = static_cast<int>(g.index(2, 16));
        const Tensor x = g.tensor(g.index(1, 12), g.index(1, 12), g.uniform(0.01, 50.0));
        const QuantParams p = calibrate_params(x, bits, gran);
        const Tensor y = dequantize(quantize(x, p));
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const std::size_t k = p.group_of(r, c);
                const double s = p.scales[k];
                const double lo = s * (0 - p.zero_points[k]), hi = s * (p.max_code() - p.zero_points[k]);
                const double v = x.at(r, c);
                if (v < lo || v > hi)
                    continue;
                EXPECT_LE(std::abs(y.at(r, c) - v), s / 2 + 1e-12);
            }
    }
}

TEST(Quantizer, CodesStayInRange)
{
    Gen g(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int bits = static_cast<int>(g.index(2, 12));
        const Tensor calib = g.tensor(8, 4);
        const QuantParams p = calibrate_params(calib, bits, kAll[trial % 4]);
        const Tensor wild = g.tensor(8, 4, 10.0); // mostly outside the calibrated range
        for (std::int64_t c : quantize(wild, p).codes) {
            EXPECT_GE(c, 0);
            EXPECT_LE(c, p.max_code());
        }
    }
}

TEST(Quantizer, Monotone)
{
    Gen g(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v = g.vec(200, g.uniform(0.1, 10.0));
        std::sort(v.begin(), v.end());
        const Tensor x({1, v.size()}, v);
        const QuantParams p = calibrate_params(x, static_cast<int>(g.index(2, 10)), Granularity::TensorWise);
        const Tensor wide({1, v.size()}, [&] {
            auto w = v;
            for (double& e : w)
                e *= 1.5; // includes clipped values
            return w;
        }());
        const auto codes = quantize(wide, p).codes;
        EXPECT_TRUE(std::is_sorted(codes.begin(), codes.end()));
    }
}

TEST(Quantizer, FakeQuantizeMatchesIntegerPath)
{
    Gen g(5);
    for (Granularity gran : kAll) {
        const Tensor x = g.tensor(7, 5);
        const QuantParams p = calibrate_params(x, 4, gran);
        EXPECT_EQ(fake_quantize(x, p), dequantize(quantize(x, p)));
    }
}

// Uniform quantization noise has variance S^2 / 12.
TEST(Quantizer, UniformNoiseMse)
{
    Gen g(6);
    const std::size_t n = 100000;
    Tensor x(1, n);
    for (double& v : x.values())
        v = g.uniform(-3.0, 5.0);
    const QuantParams p = tensor_params_from_range(-3.0, 5.0, 8);
    const double s = p.scales[0];
    const double mse = mean_squared_error(fake_quantize(x, p), x);
    EXPECT_LE(relative_error(mse, s * s / 12.0), 0.05);
}

TEST(Quantizer, TensorParamsFromRangeMatchesCalibration)
{
    const Tensor x = Tensor::from_rows({{-0.3, 2.0}, {1.0, 4.7}});
    EXPECT_EQ(tensor_params_from_range(-0.3, 4.7, 6), calibrate_params(x, 6, Granularity::TensorWise));
}

// Surrogate used by the gradient checks: round() replaced by the identity
// plus the rounding offset frozen at the anchor scale.
double surrogate(double x, double s, double s0, double z, double qmax)
{
    const double q0 = round_half_away(x / s0) + z;
    if (q0 < 0.0)
        return s * (0.0 - z);
    if (q0 > qmax)
        return s * (qmax - z);
    const double rho = round_half_away(x / s0) - x / s0;
    return x + s * rho;
}

TEST(Quantizer, SteMatchesSurrogateFiniteDifferences)
{
    Gen g(7);
    const double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = g.index(1, 6), cols = g.index(1, 6);
        const Granularity gran = kAll[trial % 4];
        QuantParams p;
        p.bits = 8;
        p.granularity = gran;
        const std::size_t groups = expected_group_count(gran, rows, cols);
        for (std::size_t k = 0; k < groups; ++k) {
            p.scales.push_back(g.uniform(0.05, 0.5));
            p.zero_points.push_back(static_cast<std::int64_t>(g.index(60, 190)));
        }
        // Fractional parts of x/S in [0.1, 0.4] keep every element off a rounding edge.
        Tensor x(rows, cols), up(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t k = p.group_of(r, c);
                const double code = static_cast<double>(g.index(0, 255)) - p.zero_points[k];
                const double frac = g.uniform(0.1, 0.4) * (code < 0 ? -1.0 : 1.0);
                x.at(r, c) = p.scales[k] * (code + frac);
                up.at(r, c) = g.normal();
            }
        const FakeQuantGrad grad = fake_quantize_backward(x, p, up);
        for (std::size_t k = 0; k < groups; ++k) {
            auto loss = [&](double s) {
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) {
                        const std::size_t gk = p.group_of(r, c);
                        const double sc = gk == k ? s : p.scales[gk];
                        acc += up.at(r, c) * surrogate(x.at(r, c), sc, p.scales[gk],
                                                       static_cast<double>(p.zero_points[gk]), 255.0);
                    }
                return acc;
            };
            const double fd = (loss(p.scales[k] + h) - loss(p.scales[k] - h)) / (2 * h);
            EXPECT_LE(relative_error(grad.scales[k], fd, 1e-6), 1e-4) << "trial " << trial;
        }
        // In range everywhere: the input gradient passes straight through.
        EXPECT_EQ(grad.input, up);
    }
}

TEST(Quantizer, SteClippedSingleElement)
{
    QuantParams p;
    p.bits = 8;
    p.scales = {0.01};
    p.zero_points = {3};
    const Tensor up = Tensor::from_rows({{2.0}});

    // 1000 / 0.01 lands far above 255: dy/dS = 255 - 3, dy/dx = 0.
    FakeQuantGrad hi = fake_quantize_backward(Tensor::from_rows({{1000.0}}), p, up);
    EXPECT_EQ(hi.scales[0], 2.0 * 252.0);
    EXPECT_EQ(hi.input[0], 0.0);

    // Below the range: dy/dS = 0 - 3.
    FakeQuantGrad lo = fake_quantize_backward(Tensor::from_rows({{-1000.0}}), p, up);
    EXPECT_EQ(lo.scales[0], 2.0 * -3.0);
    EXPECT_EQ(lo.input[0], 0.0);
}

TEST(Quantizer, SteZeroInputHasZeroScaleGradient)
{
    QuantParams p;
    p.bits = 4;
    p.scales = {0.3};
    p.zero_points = {7};
    Gen g(8);
    const FakeQuantGrad grad = fake_quantize_backward(Tensor(4, 4), p, g.tensor(4, 4));
    EXPECT_EQ(grad.scales[0], 0.0);
}

} // namespace
} // namespace taqdit
