// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_METRICS_HPP_
#define TAQDIT_METRICS_HPP_

#include <taqdit/quantizer.hpp>
#include <taqdit/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace taqdit {

struct ChannelRange {
    double min = 0.0;
    double max = 0.0;
    double range = 0.0;
};

inline std::vector<ChannelRange> channel_range_profile(const Tensor& x)
{
    if (x.empty())
        return {};
    const std::size_t rows = x.rows(), cols = x.cols();
    std::vector<ChannelRange> out(cols);
    for (std::size_t c = 0; c < cols; ++c)
        out[c].min = out[c].max = x.at(0, c);
    for (std::size_t r = 1; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            out[c].min = std::min(out[c].min, x.at(r, c));
            out[c].max = std::max(out[c].max, x.at(r, c));
        }
    for (auto& ch : out)
        ch.range = ch.max - ch.min;
    return out;
}

struct OccupancyOptions {
    double positive_coverage = 0.996; // share of positive elements to cover
    double majority_mass = 0.79;      // share of all elements for the window statistic
};

/// How a tensor-wise quantizer spends its bins on a distribution.
struct OccupancyReport {
    int bits = 0;
    std::uint64_t bin_count = 0;
    double negative_mass_fraction = 0.0; // elements < 0
    double negative_bin_fraction = 0.0;  // bins whose value is < 0
    double positive_bin_fraction = 0.0;  // the rest, including the zero bin
    double positive_coverage = 0.0;      // target share of positive elements
    double positive_coverage_bin_fraction = 0.0;
    double majority_mass = 0.0;
    double majority_bin_fraction = 0.0;  // narrowest code window holding majority_mass
    std::vector<ChannelRange> channel_ranges;
};

namespace detail {

inline std::uint64_t narrowest_window(const std::vector<std::int64_t>& sorted_codes, double mass)
{
    if (sorted_codes.empty())
        return 0;
    const auto n = sorted_codes.size();
    std::size_t need = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n) - 1e-9));
    need = std::clamp<std::size_t>(need, 1, n);
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (std::size_t i = 0; i + need <= n; ++i)
        best = std::min(best, sorted_codes[i + need - 1] - sorted_codes[i] + 1);
    return static_cast<std::uint64_t>(best);
}

} // namespace detail

inline OccupancyReport bin_occupancy(const Tensor& x, const QuantParams& p,
                                     const OccupancyOptions& opt = {})
{
    if (p.granularity != Granularity::TensorWise)
        throw InvalidArgument("bin occupancy is defined for tensor-wise params");
    const QuantizedTensor q = quantize(x, p);

    OccupancyReport rep;
    rep.bits = p.bits;
    rep.bin_count = static_cast<std::uint64_t>(p.max_code()) + 1;
    rep.positive_coverage = opt.positive_coverage;
    rep.majority_mass = opt.majority_mass;
    rep.channel_ranges = channel_range_profile(x);

    const auto zero_point = static_cast<std::uint64_t>(p.zero_points[0]);
    rep.negative_bin_fraction = static_cast<double>(zero_point) / static_cast<double>(rep.bin_count);
    rep.positive_bin_fraction =
        static_cast<double>(rep.bin_count - zero_point) / static_cast<double>(rep.bin_count);

    std::vector<std::int64_t> positive_codes;
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < 0.0)
            ++negatives;
        else if (x[i] > 0.0)
            positive_codes.push_back(q.codes[i]);
    }
    rep.negative_mass_fraction =
        x.empty() ? 0.0 : static_cast<double>(negatives) / static_cast<double>(x.size());

    if (!positive_codes.empty()) {
        std::sort(positive_codes.begin(), positive_codes.end());
        std::size_t need = static_cast<std::size_t>(
            std::ceil(opt.positive_coverage * static_cast<double>(positive_codes.size()) - 1e-9));
        need = std::clamp<std::size_t>(need, 1, positive_codes.size());
        const std::int64_t top = positive_codes[need - 1];
        const std::int64_t width = std::max<std::int64_t>(top - p.zero_points[0] + 1, 1);
        rep.positive_coverage_bin_fraction =
            static_cast<double>(width) / static_cast<double>(rep.bin_count);
    }

    std::vector<std::int64_t> codes = q.codes;
    std::sort(codes.begin(), codes.end());
    rep.majority_bin_fraction = static_cast<double>(detail::narrowest_window(codes, opt.majority_mass)) /
                                static_cast<double>(rep.bin_count);
    return rep;
}

inline double quant_mse(const Tensor& x, const QuantParams& p)
{
    return mean_squared_error(fake_quantize(x, p), x);
}

/// Signal-to-quantization-noise ratio in dB.
inline double sqnr_db(const Tensor& x, const QuantParams& p)
{
    const Tensor y = fake_quantize(x, p);
    double signal = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        signal += x[i] * x[i];
        noise += (y[i] - x[i]) * (y[i] - x[i]);
    }
    if (noise == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / noise);
}

// CSV writers. Headers are part of the file contract.

inline constexpr const char* kOccupancyCsvHeader =
    "tag,bits,negative_mass_fraction,negative_bin_fraction,positive_bin_fraction,"
    "positive_coverage,positive_coverage_bin_fraction,majority_mass,majority_bin_fraction";
inline constexpr const char* kRangeCsvHeader = "tag,channel,min,max,range";
inline constexpr const char* kTraceCsvHeader = "iteration,block_id,loss";
inline constexpr const char* kMetricsCsvHeader =
    "block_id,output_mse,output_sqnr_db,pf_out_input_scale,pf_out_input_mse,"
    "online_shift_computations";

inline void set_csv_precision(std::ostream& os)
{
    os.precision(17);
}

inline void write_occupancy_row(std::ostream& os, const std::string& tag, const OccupancyReport& r)
{
    os << tag << ',' << r.bits << ',' << r.negative_mass_fraction << ',' << r.negative_bin_fraction
       << ',' << r.positive_bin_fraction << ',' << r.positive_coverage << ','
       << r.positive_coverage_bin_fraction << ',' << r.majority_mass << ','
       << r.majority_bin_fraction << '\n';
}

inline void write_range_rows(std::ostream& os, const std::string& tag,
                             const std::vector<ChannelRange>& ranges)
{
    for (std::size_t c = 0; c < ranges.size(); ++c)
        os << tag << ',' << c << ',' << ranges[c].min << ',' << ranges[c].max << ','
           << ranges[c].range << '\n';
}

/// Sample variance of the trailing `fraction` of a series (n - 1 denominator).
inline double tail_variance(const std::vector<double>& series, double fraction = 0.5)
{
    if (series.empty())
        return 0.0;
    const std::size_t n = series.size();
    const std::size_t start = n - std::max<std::size_t>(1, static_cast<std::size_t>(
                                                               std::floor(fraction * static_cast<double>(n))));
    const std::size_t count = n - start;
    if (count < 2)
        return 0.0;
    double mean = 0.0;
    for (std::size_t i = start; i < n; ++i)
        mean += series[i];
    mean /= static_cast<double>(count);
    double acc = 0.0;
    for (std::size_t i = start; i < n; ++i)
        acc += (series[i] - mean) * (series[i] - mean);
    return acc / static_cast<double>(count - 1);
}

} // namespace taqdit

#endif // TAQDIT_METRICS_HPP_
