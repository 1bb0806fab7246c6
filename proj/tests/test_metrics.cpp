// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <taqdit/metrics.hpp>
#include <taqdit/toy_dit.hpp>
#include <taqdit/transforms.hpp>

#include <gtest/gtest.h>

#include <sstream>

namespace taqdit {
namespace {

using testing::Gen;

TEST(Metrics, RangeProfileMatchesScan)
{
    Gen g(1);
    Tensor x = g.tensor(20, 6);
    for (std::size_t r = 0; r < x.rows(); ++r)
        x.at(r, 4) = 1.25; // constant channel
    const auto prof = channel_range_profile(x);
    ASSERT_EQ(prof.size(), 6u);
    for (std::size_t c = 0; c < 6; ++c) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            lo = std::min(lo, x.at(r, c));
            hi = std::max(hi, x.at(r, c));
        }
        EXPECT_EQ(prof[c].min, lo);
        EXPECT_EQ(prof[c].max, hi);
        EXPECT_EQ(prof[c].range, hi - lo);
    }
    EXPECT_EQ(prof[4].range, 0.0);
    EXPECT_TRUE(channel_range_profile(Tensor()).empty());
}

TEST(Metrics, QuantMseZeroOnGrid)
{
    const QuantParams p = tensor_params_from_range(-1.0, 2.0, 4); // S = 0.2, Z = 5
    Tensor x(1, 16);
    for (std::size_t i = 0; i < 16; ++i)
        x[i] = p.scales[0] * (static_cast<double>(i) - 5.0);
    EXPECT_EQ(quant_mse(x, p), 0.0);
    x[3] += 0.05;
    EXPECT_GT(quant_mse(x, p), 0.0);
}

TEST(Metrics, QuantMseUniformNoise)
{
    Gen g(2);
    const QuantParams p = tensor_params_from_range(0.0, 1.0, 6);
    const double s = p.scales[0];
    Tensor x(1, 100000);
    for (double& v : x.values())
        v = g.uniform(0.0, s) + 10 * s; // one step, away from the clip edges
    EXPECT_LE(testing::relative_error(quant_mse(x, p), s * s / 12.0), 0.05);
}

TEST(Metrics, SqnrOfExactGridIsInfinite)
{
    const QuantParams p = tensor_params_from_range(0.0, 1.0, 8);
    EXPECT_TRUE(std::isinf(sqnr_db(Tensor(2, 2), p)));
}

TEST(Metrics, OccupancyHandCase)
{
    // Codes with S = 0.1, Z = 2 at 3 bits: -0.2 -> 0, 0 -> 2, 0.1 -> 3, 0.5 -> 7.
    QuantParams p;
    p.bits = 3;
    p.scales = {0.1};
    p.zero_points = {2};
    const Tensor x = Tensor::from_rows({{-0.2, 0.0, 0.1, 0.1, 0.1, 0.5}});
    OccupancyOptions opt;
    opt.positive_coverage = 0.75;
    opt.majority_mass = 0.5;
    const OccupancyReport r = bin_occupancy(x, p, opt);
    EXPECT_EQ(r.bin_count, 8u);
    EXPECT_DOUBLE_EQ(r.negative_mass_fraction, 1.0 / 6.0);
    EXPECT_EQ(r.negative_bin_fraction, 2.0 / 8.0);
    EXPECT_EQ(r.positive_bin_fraction, 6.0 / 8.0);
    // Three of the four positive elements sit on code 3: bins 2..3.
    EXPECT_EQ(r.positive_coverage_bin_fraction, 2.0 / 8.0);
    // Half the elements fit in the single bin of code 3.
    EXPECT_EQ(r.majority_bin_fraction, 1.0 / 8.0);
}

TEST(Metrics, OccupancyFractionsSumToOne)
{
    Gen g(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor x = g.tensor(8, 8, g.uniform(0.1, 5.0));
        const QuantParams p = calibrate_params(x, static_cast<int>(g.index(2, 10)), Granularity::TensorWise);
        const OccupancyReport r = bin_occupancy(x, p);
        EXPECT_EQ(r.negative_bin_fraction + r.positive_bin_fraction, 1.0);
        EXPECT_GT(r.majority_bin_fraction, 0.0);
        EXPECT_LE(r.majority_bin_fraction, 1.0);
    }
    EXPECT_THROW(bin_occupancy(Tensor(2, 2), calibrate_params(Tensor(2, 2), 8, Granularity::TokenWise)),
                 InvalidArgument);
}

TEST(Metrics, ShiftingHelpsAsymmetricData)
{
    GeneratorConfig cfg;
    cfg.timesteps = 5;
    cfg.per_step = 4;
    cfg.outlier_fraction = 0.0;
    const CalibrationSet set = generate_calibration(cfg);
    const ToyDiTModel m = make_toy_model(cfg, 1);
    std::vector<Tensor> parts;
    for (auto& c : post_gelu_capture(m, set, 0))
        parts.push_back(std::move(c.values));
    const Tensor a = concat_rows(parts);
    const Tensor s = apply_shift(a, channel_mid_range(a));
    const QuantParams pa = calibrate_params(a, 8, Granularity::TensorWise);
    const QuantParams ps = calibrate_params(s, 8, Granularity::TensorWise);
    EXPECT_LT(quant_mse(s, ps), quant_mse(a, pa));
    EXPECT_GT(bin_occupancy(s, ps).majority_bin_fraction, bin_occupancy(a, pa).majority_bin_fraction);
}

TEST(Metrics, TailVariance)
{
    EXPECT_DOUBLE_EQ(tail_variance({1, 2, 3, 4}), 0.5);
    EXPECT_DOUBLE_EQ(tail_variance({9, 9, 9, 1, 2, 3}), 1.0);
    EXPECT_EQ(tail_variance({5}), 0.0);
    EXPECT_EQ(tail_variance({}), 0.0);
}

TEST(Metrics, CsvHeaders)
{
    EXPECT_STREQ(kOccupancyCsvHeader,
                 "tag,bits,negative_mass_fraction,negative_bin_fraction,positive_bin_fraction,"
                 "positive_coverage,positive_coverage_bin_fraction,majority_mass,majority_bin_fraction");
    EXPECT_STREQ(kRangeCsvHeader, "tag,channel,min,max,range");
    EXPECT_STREQ(kTraceCsvHeader, "iteration,block_id,loss");
    EXPECT_STREQ(kMetricsCsvHeader,
                 "block_id,output_mse,output_sqnr_db,pf_out_input_scale,pf_out_input_mse,"
                 "online_shift_computations");
}

TEST(Metrics, CsvRows)
{
    std::ostringstream os;
    set_csv_precision(os);
    write_range_rows(os, "b0", {{-1.0, 2.0, 3.0}, {0.0, 0.5, 0.5}});
    EXPECT_EQ(os.str(), "b0,0,-1,2,3\nb0,1,0,0.5,0.5\n");
    std::ostringstream occ;
    OccupancyReport r;
    r.bits = 8;
    r.negative_mass_fraction = 0.25;
    write_occupancy_row(occ, "x", r);
    EXPECT_EQ(occ.str(), "x,8,0.25,0,0,0,0,0,0\n");
}

} // namespace
} // namespace taqdit
