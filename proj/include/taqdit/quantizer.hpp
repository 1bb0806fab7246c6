// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_QUANTIZER_HPP_
#define TAQDIT_QUANTIZER_HPP_

#include <taqdit/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace taqdit {

/// Scale floor used for degenerate (constant) groups and for scale projection.
inline constexpr double kScaleEpsilon = 1e-8;

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 48;

/// Which elements share one (scale, zero point) pair.
///
/// A tensor is viewed as rows x cols (tokens x channels for activations,
/// C_i x C_o for weights).
enum class Granularity : std::uint8_t {
    TensorWise = 0,
    TokenWise = 1,         // one group per row
    WeightChannelWise = 2, // one group per column, i.e. per output channel of W
    InputChannelWise = 3,  // one group per column of an activation
};

inline const char* granularity_name(Granularity g) noexcept
{
    switch (g) {
    case Granularity::TensorWise: return "tensor";
    case Granularity::TokenWise: return "token";
    case Granularity::WeightChannelWise: return "weight-channel";
    case Granularity::InputChannelWise: return "input-channel";
    }
    return "?";
}

inline std::size_t expected_group_count(Granularity g, std::size_t rows, std::size_t cols) noexcept
{
    switch (g) {
    case Granularity::TensorWise: return 1;
    case Granularity::TokenWise: return rows;
    case Granularity::WeightChannelWise:
    case Granularity::InputChannelWise: return cols;
    }
    return 0;
}

struct QuantParams {
    std::vector<double> scales;
    std::vector<std::int64_t> zero_points;
    int bits = 8;
    Granularity granularity = Granularity::TensorWise;

    std::int64_t max_code() const noexcept { return (std::int64_t{1} << bits) - 1; }
    std::size_t group_count() const noexcept { return scales.size(); }

    std::size_t group_of(std::size_t r, std::size_t c) const noexcept
    {
        switch (granularity) {
        case Granularity::TensorWise: return 0;
        case Granularity::TokenWise: return r;
        default: return c;
        }
    }

    /// Throws unless the params can be applied to a rows x cols tensor.
    void validate_for(std::size_t rows, std::size_t cols) const
    {
        if (bits < kMinBits || bits > kMaxBits)
            throw InvalidArgument("bit-width " + std::to_string(bits) + " outside [" +
                                  std::to_string(kMinBits) + ", " + std::to_string(kMaxBits) + "]");
        if (zero_points.size() != scales.size())
            throw DimensionError("scale/zero-point count mismatch");
        const std::size_t want = expected_group_count(granularity, rows, cols);
        if (scales.size() != want)
            throw DimensionError(std::string(granularity_name(granularity)) + " params carry " +
                                 std::to_string(scales.size()) + " groups, tensor needs " +
                                 std::to_string(want));
        for (std::size_t g = 0; g < scales.size(); ++g) {
            if (!(scales[g] > 0.0) || !std::isfinite(scales[g]))
                throw InvalidArgument("scale of group " + std::to_string(g) + " is not positive");
            if (zero_points[g] < 0 || zero_points[g] > max_code())
                throw InvalidArgument("zero point of group " + std::to_string(g) + " out of range");
        }
    }

    friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

struct QuantizedTensor {
    Shape shape;
    std::vector<std::int64_t> codes;
    QuantParams params;

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// Round half away from zero.
inline double round_half_away(double v) noexcept
{
    return std::round(v);
}

inline std::int64_t quantize_value(double x, double scale, std::int64_t zero_point,
                                   std::int64_t max_code) noexcept
{
    const double q = round_half_away(x / scale) + static_cast<double>(zero_point);
    if (!(q > 0.0))
        return 0;
    if (q >= static_cast<double>(max_code))
        return max_code;
    return static_cast<std::int64_t>(q);
}

inline double dequantize_value(std::int64_t code, double scale, std::int64_t zero_point) noexcept
{
    return scale * static_cast<double>(code - zero_point);
}

/// Scale and zero point of one group observed on [lo, hi].
inline void params_from_range(double lo, double hi, std::int64_t qmax, double& scale,
                              std::int64_t& zero_point)
{
    if (!(hi > lo)) {
        scale = kScaleEpsilon;
        zero_point = 0;
        return;
    }
    scale = std::max((hi - lo) / static_cast<double>(qmax), kScaleEpsilon);
    const double z = round_half_away(-lo / scale);
    zero_point = static_cast<std::int64_t>(std::clamp(z, 0.0, static_cast<double>(qmax)));
}

/// Min/max calibration of scale and zero point for each group.
inline QuantParams calibrate_params(const Tensor& x, int bits, Granularity granularity)
{
    if (x.empty())
        throw InvalidArgument("cannot calibrate quantization params on an empty tensor");
    if (bits < kMinBits || bits > kMaxBits)
        throw InvalidArgument("bit-width " + std::to_string(bits) + " not supported");

    const std::size_t rows = x.rows(), cols = x.cols();
    const std::size_t groups = expected_group_count(granularity, rows, cols);
    std::vector<double> lo(groups, std::numeric_limits<double>::infinity());
    std::vector<double> hi(groups, -std::numeric_limits<double>::infinity());

    QuantParams p;
    p.bits = bits;
    p.granularity = granularity;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t g = p.group_of(r, c);
            const double v = x.at(r, c);
            lo[g] = std::min(lo[g], v);
            hi[g] = std::max(hi[g], v);
        }

    p.scales.resize(groups);
    p.zero_points.resize(groups);
    for (std::size_t g = 0; g < groups; ++g)
        params_from_range(lo[g], hi[g], p.max_code(), p.scales[g], p.zero_points[g]);
    return p;
}

/// Tensor-wise params for data whose global extremes are already known.
inline QuantParams tensor_params_from_range(double lo, double hi, int bits)
{
    if (bits < kMinBits || bits > kMaxBits)
        throw InvalidArgument("bit-width " + std::to_string(bits) + " not supported");
    QuantParams p;
    p.bits = bits;
    p.granularity = Granularity::TensorWise;
    p.scales.resize(1);
    p.zero_points.resize(1);
    params_from_range(lo, hi, p.max_code(), p.scales[0], p.zero_points[0]);
    return p;
}

inline QuantizedTensor quantize(const Tensor& x, const QuantParams& p)
{
    const std::size_t rows = x.rows(), cols = x.cols();
    p.validate_for(rows, cols);
    QuantizedTensor q{x.shape(), std::vector<std::int64_t>(x.size()), p};
    const std::int64_t qmax = p.max_code();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t g = p.group_of(r, c);
            q.codes[r * cols + c] = quantize_value(x.at(r, c), p.scales[g], p.zero_points[g], qmax);
        }
    return q;
}

inline Tensor dequantize(const QuantizedTensor& q)
{
    Tensor out(q.shape);
    const std::size_t cols = out.cols(), rows = out.rows();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t g = q.params.group_of(r, c);
            out[r * cols + c] =
                dequantize_value(q.codes[r * cols + c], q.params.scales[g], q.params.zero_points[g]);
        }
    return out;
}

/// dequantize(quantize(x, p)) without the intermediate code buffer.
inline Tensor fake_quantize(const Tensor& x, const QuantParams& p)
{
    const std::size_t rows = x.rows(), cols = x.cols();
    p.validate_for(rows, cols);
    Tensor out(x.shape());
    const std::int64_t qmax = p.max_code();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t g = p.group_of(r, c);
            const std::int64_t code = quantize_value(x.at(r, c), p.scales[g], p.zero_points[g], qmax);
            out[r * cols + c] = dequantize_value(code, p.scales[g], p.zero_points[g]);
        }
    return out;
}

/// Straight-through-estimator backward pass of fake_quantize.
///
/// Forward: y = S (clip(round(x/S) + Z, 0, qmax) - Z) with Z held fixed.
/// Backward treats round() as the identity:
///   in range:  dy/dx = 1, dy/dS = round(x/S) - x/S
///   clipped:   dy/dx = 0, dy/dS = c - Z  (c the clip bound that was hit)
struct FakeQuantGrad {
    Tensor input;                    // dL/dx
    std::vector<double> scales;      // dL/dS per group
};

inline FakeQuantGrad fake_quantize_backward(const Tensor& x, const QuantParams& p,
                                            const Tensor& upstream)
{
    if (upstream.shape() != x.shape())
        throw DimensionError("upstream gradient " + shape_string(upstream.shape()) +
                             " does not match input " + shape_string(x.shape()));
    const std::size_t rows = x.rows(), cols = x.cols();
    p.validate_for(rows, cols);
    FakeQuantGrad grad{Tensor(x.shape()), std::vector<double>(p.group_count(), 0.0)};
    const double qmax = static_cast<double>(p.max_code());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const std::size_t g = p.group_of(r, c);
            const double s = p.scales[g];
            const double z = static_cast<double>(p.zero_points[g]);
            const double u = x[i] / s;
            const double rounded = round_half_away(u);
            const double q = rounded + z;
            const double gy = upstream[i];
            if (q < 0.0) {
                grad.scales[g] += gy * (0.0 - z);
            } else if (q > qmax) {
                grad.scales[g] += gy * (qmax - z);
            } else {
                grad.input[i] = gy;
                grad.scales[g] += gy * (rounded - u);
            }
        }
    return grad;
}

} // namespace taqdit

#endif // TAQDIT_QUANTIZER_HPP_
