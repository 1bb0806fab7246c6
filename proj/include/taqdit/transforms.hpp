// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_TRANSFORMS_HPP_
#define TAQDIT_TRANSFORMS_HPP_

#include <taqdit/quantizer.hpp>
#include <taqdit/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace taqdit {

inline constexpr double kDefaultMomentum = 0.95;

/// Per-channel (min + max) / 2 over the token axis.
inline std::vector<double> channel_mid_range(const Tensor& a)
{
    if (a.empty())
        throw InvalidArgument("channel_mid_range of an empty tensor");
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> lo(a.row(0).begin(), a.row(0).end());
    std::vector<double> hi = lo;
    for (std::size_t r = 1; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = a.at(r, c);
            lo[c] = std::min(lo[c], v);
            hi[c] = std::max(hi[c], v);
        }
    std::vector<double> mid(cols);
    for (std::size_t c = 0; c < cols; ++c)
        mid[c] = (hi[c] + lo[c]) / 2.0;
    return mid;
}

/// Per-channel max - min over the token axis.
inline std::vector<double> channel_ranges(const Tensor& a)
{
    if (a.empty())
        throw InvalidArgument("channel_ranges of an empty tensor");
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<double> lo(a.row(0).begin(), a.row(0).end());
    std::vector<double> hi = lo;
    for (std::size_t r = 1; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = a.at(r, c);
            lo[c] = std::min(lo[c], v);
            hi[c] = std::max(hi[c], v);
        }
    std::vector<double> range(cols);
    for (std::size_t c = 0; c < cols; ++c)
        range[c] = hi[c] - lo[c];
    return range;
}

/// Exponential moving average of per-channel shifting values.
class ShiftState {
public:
    ShiftState() : ShiftState(0) {}

    explicit ShiftState(std::size_t channels, double beta = kDefaultMomentum)
        : values_(channels, 0.0), beta_(beta)
    {
        if (!(beta >= 0.0 && beta < 1.0))
            throw InvalidArgument("momentum coefficient must lie in [0, 1)");
    }

    ShiftState(std::vector<double> values, double beta, std::uint64_t updates_seen)
        : values_(std::move(values)), beta_(beta), updates_seen_(updates_seen)
    {
        if (!(beta >= 0.0 && beta < 1.0))
            throw InvalidArgument("momentum coefficient must lie in [0, 1)");
    }

    const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& mutable_values() noexcept { return values_; }
    double beta() const noexcept { return beta_; }
    std::uint64_t updates_seen() const noexcept { return updates_seen_; }
    std::size_t channels() const noexcept { return values_.size(); }

    friend bool operator==(const ShiftState&, const ShiftState&) = default;

private:
    std::vector<double> values_;
    double beta_;
    std::uint64_t updates_seen_ = 0;
};

/// v <- beta v + (1 - beta) v_current. The first update adopts v_current as is.
inline ShiftState momentum_update(const ShiftState& state, std::span<const double> current)
{
    if (current.size() != state.channels())
        throw DimensionError("momentum update with " + std::to_string(current.size()) +
                             " values for " + std::to_string(state.channels()) + " channels");
    std::vector<double> next(current.begin(), current.end());
    if (state.updates_seen() > 0) {
        const double b = state.beta();
        for (std::size_t c = 0; c < next.size(); ++c)
            next[c] = b * state.values()[c] + (1.0 - b) * current[c];
    }
    return ShiftState(std::move(next), state.beta(), state.updates_seen() + 1);
}

inline Tensor apply_shift(const Tensor& a, std::span<const double> values)
{
    if (a.cols() != values.size())
        throw DimensionError("shift of length " + std::to_string(values.size()) +
                             " for tensor " + shape_string(a.shape()));
    Tensor out = a;
    const std::size_t cols = a.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out[r * cols + c] -= values[c];
    return out;
}

inline Tensor apply_shift(const Tensor& a, const ShiftState& state)
{
    return apply_shift(a, state.values());
}

/// Returns the layer whose bias absorbs the shift: b' = v W + b.
inline LinearLayer fold_shift_into_bias(const LinearLayer& layer, std::span<const double> values)
{
    if (values.size() != layer.in_features())
        throw DimensionError("shift of length " + std::to_string(values.size()) +
                             " for layer with " + std::to_string(layer.in_features()) + " inputs");
    const Tensor row({1, values.size()}, std::vector<double>(values.begin(), values.end()));
    const Tensor vw = matmul(row, layer.weight);
    LinearLayer out = layer;
    for (std::size_t j = 0; j < out.bias.size(); ++j)
        out.bias[j] = vw[j] + layer.bias[j];
    return out;
}

inline LinearLayer fold_shift_into_bias(const LinearLayer& layer, const ShiftState& state)
{
    return fold_shift_into_bias(layer, state.values());
}

struct MigrationPlan {
    std::vector<std::size_t> outlier_indices; // strictly increasing
    std::vector<double> factors;              // one per outlier, >= 1

    std::size_t size() const noexcept { return outlier_indices.size(); }
    bool empty() const noexcept { return outlier_indices.empty(); }

    void validate(std::size_t channels) const
    {
        if (factors.size() != outlier_indices.size())
            throw DimensionError("migration plan has " + std::to_string(factors.size()) +
                                 " factors for " + std::to_string(outlier_indices.size()) +
                                 " channels");
        for (std::size_t i = 0; i < outlier_indices.size(); ++i) {
            if (outlier_indices[i] >= channels)
                throw InvalidArgument("outlier channel " + std::to_string(outlier_indices[i]) +
                                      " out of range for " + std::to_string(channels) +
                                      " channels");
            if (i > 0 && outlier_indices[i] <= outlier_indices[i - 1])
                throw InvalidArgument("outlier channels must be strictly increasing");
            if (!(factors[i] > 0.0) || !std::isfinite(factors[i]))
                throw InvalidArgument("migration factor must be positive");
        }
    }

    friend bool operator==(const MigrationPlan&, const MigrationPlan&) = default;
};

/// ceil(1% of the channel count).
inline std::size_t default_outlier_count(std::size_t channels)
{
    return (channels + 99) / 100;
}

/// Top-k channels by range, ties to the lower index, returned ascending.
inline std::vector<std::size_t> select_outlier_channels(std::span<const double> ranges,
                                                        std::size_t k)
{
    const std::size_t cols = ranges.size();
    if (k >= cols)
        throw InvalidArgument("requested " + std::to_string(k) + " outlier channels out of " +
                              std::to_string(cols));
    if (k == 0)
        return {};
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ranges[a] > ranges[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

inline std::vector<std::size_t> select_outlier_channels(const Tensor& a_shifted, std::size_t k)
{
    if (k >= a_shifted.cols())
        throw InvalidArgument("requested " + std::to_string(k) + " outlier channels out of " +
                              std::to_string(a_shifted.cols()));
    if (k == 0)
        return {};
    const std::vector<double> range = channel_ranges(a_shifted);
    return select_outlier_channels(range, k);
}

/// Per-channel max |a| over the token axis.
inline std::vector<double> channel_abs_max(const Tensor& a)
{
    std::vector<double> peak(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
            peak[c] = std::max(peak[c], std::abs(a.at(r, c)));
    return peak;
}

/// m_i = max(1, round(peak_i / max over normal channels of peak_n)).
inline MigrationPlan init_migration_factors(std::span<const double> peaks,
                                            std::span<const std::size_t> indices)
{
    const std::size_t cols = peaks.size();
    std::vector<bool> outlier(cols, false);
    for (std::size_t idx : indices) {
        if (idx >= cols)
            throw InvalidArgument("outlier channel " + std::to_string(idx) + " out of range");
        outlier[idx] = true;
    }
    if (std::count(outlier.begin(), outlier.end(), true) == static_cast<std::ptrdiff_t>(cols))
        throw InvalidArgument("every channel is marked as outlier; no normal channel remains");

    double normal_peak = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
        if (!outlier[c])
            normal_peak = std::max(normal_peak, peaks[c]);

    MigrationPlan plan;
    plan.outlier_indices.assign(indices.begin(), indices.end());
    std::sort(plan.outlier_indices.begin(), plan.outlier_indices.end());
    plan.factors.reserve(indices.size());
    for (std::size_t idx : plan.outlier_indices) {
        const double ratio = normal_peak > 0.0 ? peaks[idx] / normal_peak : 1.0;
        plan.factors.push_back(std::max(1.0, round_half_away(ratio)));
    }
    plan.validate(cols);
    return plan;
}

/// Factors from the absolute maxima of a shifted activation tensor.
inline MigrationPlan init_migration_factors(const Tensor& a_shifted,
                                            std::span<const std::size_t> indices)
{
    if (a_shifted.empty())
        throw InvalidArgument("init_migration_factors of an empty tensor");
    const std::vector<double> peaks = channel_abs_max(a_shifted);
    return init_migration_factors(peaks, indices);
}

/// Divides outlier activation columns by m and multiplies the matching weight
/// rows by m. The product a W is unchanged up to rounding.
inline std::pair<Tensor, LinearLayer> migrate(const LinearLayer& layer, const Tensor& a_shifted,
                                              const MigrationPlan& plan)
{
    if (a_shifted.cols() != layer.in_features())
        throw DimensionError("activation " + shape_string(a_shifted.shape()) +
                             " does not feed layer " + shape_string(layer.weight.shape()));
    plan.validate(layer.in_features());
    Tensor a = a_shifted;
    LinearLayer out = layer;
    const std::size_t cols = a.cols(), co = layer.out_features();
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const std::size_t ch = plan.outlier_indices[i];
        const double m = plan.factors[i];
        for (std::size_t r = 0; r < a.rows(); ++r)
            a[r * cols + ch] /= m;
        for (std::size_t j = 0; j < co; ++j)
            out.weight.at(ch, j) *= m;
    }
    return {std::move(a), std::move(out)};
}

/// Replaces each outlier channel by m copies of a/m and repeats its weight row m
/// times. Sub-channels are inserted in place, so the expanded width is
/// C_i + sum(m - 1).
inline std::pair<Tensor, LinearLayer> split_channels(const LinearLayer& layer,
                                                     const Tensor& a_shifted,
                                                     const MigrationPlan& plan)
{
    if (a_shifted.cols() != layer.in_features())
        throw DimensionError("activation " + shape_string(a_shifted.shape()) +
                             " does not feed layer " + shape_string(layer.weight.shape()));
    plan.validate(layer.in_features());
    const std::size_t ci = layer.in_features(), co = layer.out_features();
    std::vector<std::size_t> copies(ci, 1);
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const double m = plan.factors[i];
        if (m != std::floor(m))
            throw InvalidArgument("channel splitting needs integer factors, got " +
                                  std::to_string(m));
        copies[plan.outlier_indices[i]] = static_cast<std::size_t>(m);
    }
    const std::size_t expanded = std::accumulate(copies.begin(), copies.end(), std::size_t{0});

    const std::size_t rows = a_shifted.rows();
    Tensor a(rows, expanded);
    LinearLayer out{Tensor(expanded, co), layer.bias};
    std::size_t e = 0;
    for (std::size_t c = 0; c < ci; ++c) {
        const double m = static_cast<double>(copies[c]);
        for (std::size_t k = 0; k < copies[c]; ++k, ++e) {
            for (std::size_t r = 0; r < rows; ++r)
                a.at(r, e) = copies[c] == 1 ? a_shifted.at(r, c) : a_shifted.at(r, c) / m;
            for (std::size_t j = 0; j < co; ++j)
                out.weight.at(e, j) = layer.weight.at(c, j);
        }
    }
    return {std::move(a), std::move(out)};
}

/// How the outlier factors enter the second feedforward layer.
enum class MigrationKind : std::uint8_t { None = 0, Migrate = 1, Split = 2 };

inline const char* migration_kind_name(MigrationKind k) noexcept
{
    switch (k) {
    case MigrationKind::None: return "none";
    case MigrationKind::Migrate: return "migrate";
    case MigrationKind::Split: return "split";
    }
    return "?";
}

/// Flattened description of a migrated or split input side.
///
/// Expanded channel e reads source channel `source[e]` scaled by
/// 1 / factor, and pairs with the source weight row scaled by
/// `weight_multiplier[e]` (the factor for migration, 1 for splitting).
struct ChannelMap {
    std::vector<std::size_t> source;
    std::vector<double> act_divisor;
    std::vector<double> weight_multiplier;
    std::vector<std::ptrdiff_t> plan_slot; // index into the plan's factors, -1 for normal

    std::size_t width() const noexcept { return source.size(); }

    static ChannelMap build(std::size_t channels, const MigrationPlan& plan, MigrationKind kind)
    {
        plan.validate(channels);
        std::vector<std::ptrdiff_t> slot(channels, -1);
        if (kind != MigrationKind::None)
            for (std::size_t i = 0; i < plan.size(); ++i)
                slot[plan.outlier_indices[i]] = static_cast<std::ptrdiff_t>(i);
        ChannelMap map;
        for (std::size_t c = 0; c < channels; ++c) {
            if (slot[c] < 0) {
                map.source.push_back(c);
                map.act_divisor.push_back(1.0);
                map.weight_multiplier.push_back(1.0);
                map.plan_slot.push_back(-1);
                continue;
            }
            const double m = plan.factors[static_cast<std::size_t>(slot[c])];
            if (kind == MigrationKind::Migrate) {
                map.source.push_back(c);
                map.act_divisor.push_back(m);
                map.weight_multiplier.push_back(m);
                map.plan_slot.push_back(slot[c]);
            } else {
                if (m != std::floor(m))
                    throw InvalidArgument("channel splitting needs integer factors");
                for (std::size_t k = 0; k < static_cast<std::size_t>(m); ++k) {
                    map.source.push_back(c);
                    map.act_divisor.push_back(m);
                    map.weight_multiplier.push_back(1.0);
                    map.plan_slot.push_back(slot[c]);
                }
            }
        }
        return map;
    }

    Tensor map_activations(const Tensor& a) const
    {
        Tensor out(a.rows(), width());
        const std::size_t w = width();
        for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t e = 0; e < w; ++e) {
                const double v = a.at(r, source[e]);
                out[r * w + e] = act_divisor[e] == 1.0 ? v : v / act_divisor[e];
            }
        return out;
    }

    Tensor map_weight(const Tensor& weight) const
    {
        const std::size_t co = weight.cols();
        Tensor out(width(), co);
        for (std::size_t e = 0; e < width(); ++e)
            for (std::size_t j = 0; j < co; ++j)
                out.at(e, j) = weight.at(source[e], j) * weight_multiplier[e];
        return out;
    }
};

} // namespace taqdit

#endif // TAQDIT_TRANSFORMS_HPP_
