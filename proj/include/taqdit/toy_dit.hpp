// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_TOY_DIT_HPP_
#define TAQDIT_TOY_DIT_HPP_

#include <taqdit/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace taqdit {

/// Per-channel scale/offset applied ahead of each sub-block.
///
/// The toy block has no timestep-conditioned modulation, so it keeps only the
/// affine part of the normalization. Normalizing token statistics would cancel
/// the timestep-dependent scale that the calibration generator injects.
struct ChannelAffine {
    std::vector<double> scale;
    std::vector<double> offset;

    static ChannelAffine identity(std::size_t d)
    {
        return {std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};
    }

    Tensor apply(const Tensor& x) const
    {
        if (x.cols() != scale.size() || offset.size() != scale.size())
            throw DimensionError("channel affine of width " + std::to_string(scale.size()) +
                                 " applied to " + shape_string(x.shape()));
        Tensor out = x;
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j)
                out[r * c + j] = x[r * c + j] * scale[j] + offset[j];
        return out;
    }

    friend bool operator==(const ChannelAffine&, const ChannelAffine&) = default;
};

struct ToyDiTBlock {
    ChannelAffine norm1;
    LinearLayer query;
    LinearLayer key;
    LinearLayer value;
    LinearLayer out_proj;
    ChannelAffine norm2;
    LinearLayer pf_in;  // d -> 4d
    LinearLayer pf_out; // 4d -> d

    std::size_t width() const noexcept { return query.in_features(); }
};

/// Channels that carry heavy-tailed magnitudes.
///
/// Each carrier input channel feeds exactly one post-GELU target channel and
/// bypasses attention. The model's channel affines scale carriers down by
/// their gain and pf_in scales them back up, so the outliers surface only in
/// a few post-GELU channels.
struct OutlierLayout {
    std::vector<std::size_t> carriers; // input channels, d-space
    std::vector<std::size_t> targets;  // post-GELU channels, 4d-space
    std::vector<double> gains;         // per-carrier magnitude
    std::vector<std::size_t> always_on; // post-GELU channels with a floor above zero

    std::size_t size() const noexcept { return carriers.size(); }
};

struct GeneratorConfig {
    std::size_t timesteps = 25;
    std::size_t per_step = 32;
    std::size_t width = 64;  // d
    std::size_t tokens = 64; // T
    std::uint64_t seed = 0;
    std::size_t schedule_steps = 100;
    double range_start = 1.0;
    double range_end = 3.0;
    double outlier_fraction = 0.02; // of 4d
    double outlier_scale = 8.0;
    double lognormal_sigma = 1.5;
    double always_on_fraction = 0.02; // of 4d, never overlapping the targets
    double always_on_bias = 20.0;
    double always_on_input_scale = 0.3;
};

struct CalibrationSample {
    std::uint32_t timestep = 0;
    Tensor input; // T x d

    friend bool operator==(const CalibrationSample&, const CalibrationSample&) = default;
};

struct CalibrationSet {
    std::vector<CalibrationSample> samples;
    std::size_t timesteps = 0;
    std::size_t per_step = 0;
    std::size_t width = 0;
    std::size_t tokens = 0;
    std::uint64_t seed = 0;

    /// Distinct timestep tags in ascending order.
    std::vector<std::uint32_t> timestep_tags() const
    {
        std::vector<std::uint32_t> tags;
        for (const auto& s : samples)
            tags.push_back(s.timestep);
        std::sort(tags.begin(), tags.end());
        tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
        return tags;
    }

    friend bool operator==(const CalibrationSet&, const CalibrationSet&) = default;
};

inline std::size_t outlier_channel_count(std::size_t width, double fraction)
{
    const double n = std::round(fraction * static_cast<double>(4 * width));
    return std::min(static_cast<std::size_t>(std::max(n, 0.0)), width);
}

/// Deterministic layout for a given width and seed. Carrier gains are
/// scale * exp(sigma |z|), a log-normal tail floored at `outlier_scale`.
inline OutlierLayout make_outlier_layout(std::size_t width, std::uint64_t seed, double fraction,
                                         double outlier_scale, double sigma,
                                         double always_on_fraction = 0.0)
{
    const std::size_t count = outlier_channel_count(width, fraction);
    const auto always_on = static_cast<std::size_t>(
        std::round(always_on_fraction * static_cast<double>(4 * width)));
    if (count + always_on > 4 * width)
        throw InvalidArgument("outlier and always-on channels exceed the hidden width");
    std::mt19937_64 rng(seed ^ 0x6f75746c69657273ULL);
    std::vector<std::size_t> in(width), hidden(4 * width);
    std::iota(in.begin(), in.end(), std::size_t{0});
    std::iota(hidden.begin(), hidden.end(), std::size_t{0});
    std::shuffle(in.begin(), in.end(), rng);
    std::shuffle(hidden.begin(), hidden.end(), rng);
    OutlierLayout layout;
    layout.carriers.assign(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(count));
    layout.targets.assign(hidden.begin(), hidden.begin() + static_cast<std::ptrdiff_t>(count));
    layout.always_on.assign(hidden.begin() + static_cast<std::ptrdiff_t>(count),
                            hidden.begin() + static_cast<std::ptrdiff_t>(count + always_on));
    std::sort(layout.always_on.begin(), layout.always_on.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < count; ++i)
        layout.gains.push_back(outlier_scale * std::exp(sigma * std::abs(normal(rng))));
    return layout;
}

inline OutlierLayout make_outlier_layout(const GeneratorConfig& cfg)
{
    return make_outlier_layout(cfg.width, cfg.seed, cfg.outlier_fraction, cfg.outlier_scale,
                               cfg.lognormal_sigma, cfg.always_on_fraction);
}

struct ToyDiTModel {
    std::vector<ToyDiTBlock> blocks;
    std::size_t width = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline LinearLayer random_linear(std::size_t in, std::size_t out, double weight_std,
                                 double bias_mean, double bias_std, std::mt19937_64& rng)
{
    std::normal_distribution<double> w(0.0, weight_std);
    std::normal_distribution<double> b(bias_mean, bias_std);
    LinearLayer layer{Tensor(in, out), Tensor({out})};
    for (double& v : layer.weight.values())
        v = w(rng);
    for (double& v : layer.bias.values())
        v = b(rng);
    return layer;
}

inline ChannelAffine random_affine(std::size_t d, std::mt19937_64& rng)
{
    std::normal_distribution<double> s(1.0, 0.1);
    std::normal_distribution<double> o(0.0, 0.05);
    ChannelAffine a;
    for (std::size_t i = 0; i < d; ++i) {
        a.scale.push_back(s(rng));
        a.offset.push_back(o(rng));
    }
    return a;
}

} // namespace detail

/// Seeded toy model. Carrier routing follows the layout of the calibration
/// generator seeded with the same value.
struct ModelFixture {
    double always_on_bias = 20.0;
    double always_on_input_scale = 0.3;
};

inline ToyDiTModel make_toy_model(std::size_t width, std::size_t block_count, std::uint64_t seed,
                                  const OutlierLayout& layout, const ModelFixture& fixture = {})
{
    ToyDiTModel model;
    model.width = width;
    model.seed = seed;
    std::mt19937_64 rng(seed ^ 0x746f792d646974ULL);
    const double d = static_cast<double>(width);
    for (std::size_t b = 0; b < block_count; ++b) {
        ToyDiTBlock blk;
        blk.norm1 = detail::random_affine(width, rng);
        blk.query = detail::random_linear(width, width, 1.0 / std::sqrt(d), 0.0, 0.02, rng);
        blk.key = detail::random_linear(width, width, 1.0 / std::sqrt(d), 0.0, 0.02, rng);
        blk.value = detail::random_linear(width, width, 1.0 / std::sqrt(d), 0.0, 0.02, rng);
        blk.out_proj = detail::random_linear(width, width, 1.0 / std::sqrt(d), 0.0, 0.02, rng);
        blk.norm2 = detail::random_affine(width, rng);
        blk.pf_in = detail::random_linear(width, 4 * width, 0.5 / std::sqrt(d), -0.75, 0.75, rng);
        blk.pf_out = detail::random_linear(4 * width, width, 1.0 / std::sqrt(4.0 * d), 0.0, 0.02, rng);

        for (std::size_t i = 0; i < layout.size(); ++i) {
            const std::size_t c = layout.carriers[i];
            const std::size_t t = layout.targets[i];
            const double gain = layout.gains[i];
            blk.norm1.scale[c] = 1.0 / gain;
            blk.norm1.offset[c] = 0.0;
            blk.norm2.scale[c] = 1.0 / gain;
            blk.norm2.offset[c] = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
                blk.query.weight.at(c, j) = 0.0;
                blk.key.weight.at(c, j) = 0.0;
                blk.value.weight.at(c, j) = 0.0;
            }
            for (std::size_t j = 0; j < 4 * width; ++j)
                blk.pf_in.weight.at(c, j) = 0.0;
            for (std::size_t r = 0; r < width; ++r)
                blk.pf_in.weight.at(r, t) = 0.0;
            blk.pf_in.weight.at(c, t) = gain;
            for (std::size_t j = 0; j < width; ++j)
                blk.pf_out.weight.at(t, j) /= gain;
        }
        for (std::size_t t : layout.always_on) {
            blk.pf_in.bias[t] = fixture.always_on_bias;
            for (std::size_t r = 0; r < width; ++r)
                blk.pf_in.weight.at(r, t) *= fixture.always_on_input_scale;
        }
        model.blocks.push_back(std::move(blk));
    }
    return model;
}

inline ToyDiTModel make_toy_model(const GeneratorConfig& cfg, std::size_t block_count)
{
    return make_toy_model(cfg.width, block_count, cfg.seed, make_outlier_layout(cfg),
                          {cfg.always_on_bias, cfg.always_on_input_scale});
}

/// Row-wise numerically stable softmax.
inline Tensor softmax_rows(const Tensor& s)
{
    Tensor out = s;
    const std::size_t c = s.cols();
    for (std::size_t r = 0; r < s.rows(); ++r) {
        double m = s.at(r, 0);
        for (std::size_t j = 1; j < c; ++j)
            m = std::max(m, s.at(r, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(s.at(r, j) - m);
            out.at(r, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < c; ++j)
            out.at(r, j) /= sum;
    }
    return out;
}

/// Single-head scaled dot-product attention over the token axis.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v)
{
    Tensor scores = matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    for (double& s : scores.values())
        s *= scale;
    return matmul(softmax_rows(scores), v);
}

struct BlockActivations {
    Tensor attn_in;   // norm1(x)
    Tensor attn_out;  // softmax(qk^T) v, input of out_proj
    Tensor mid;       // x + out_proj(attn_out)
    Tensor pf_input;  // norm2(mid)
    Tensor post_gelu; // gelu(pf_in(pf_input))
    Tensor output;    // mid + pf_out(post_gelu)
};

inline BlockActivations block_trace(const ToyDiTBlock& block, const Tensor& x)
{
    if (x.cols() != block.width())
        throw DimensionError("block of width " + std::to_string(block.width()) +
                             " given input " + shape_string(x.shape()));
    BlockActivations act;
    act.attn_in = block.norm1.apply(x);
    const Tensor q = linear_forward(block.query, act.attn_in);
    const Tensor k = linear_forward(block.key, act.attn_in);
    const Tensor v = linear_forward(block.value, act.attn_in);
    act.attn_out = attention(q, k, v);
    act.mid = add(x, linear_forward(block.out_proj, act.attn_out));
    act.pf_input = block.norm2.apply(act.mid);
    act.post_gelu = gelu(linear_forward(block.pf_in, act.pf_input));
    act.output = add(act.mid, linear_forward(block.pf_out, act.post_gelu));
    return act;
}

inline Tensor block_forward(const ToyDiTBlock& block, const Tensor& x)
{
    return block_trace(block, x).output;
}

inline Tensor model_forward(const ToyDiTModel& model, const Tensor& x)
{
    Tensor h = x;
    for (const auto& blk : model.blocks)
        h = block_forward(blk, h);
    return h;
}

/// Range multiplier for a schedule step: linear from range_start to range_end.
inline double timestep_range_multiplier(const GeneratorConfig& cfg, std::uint32_t step)
{
    if (cfg.schedule_steps <= 1)
        return cfg.range_start;
    const double frac = static_cast<double>(step) / static_cast<double>(cfg.schedule_steps - 1);
    return cfg.range_start + (cfg.range_end - cfg.range_start) * frac;
}

/// Schedule steps picked uniformly: round(i (S - 1) / (n - 1)).
inline std::vector<std::uint32_t> uniform_timesteps(std::size_t count, std::size_t schedule_steps)
{
    std::vector<std::uint32_t> steps;
    if (count == 1) {
        steps.push_back(0);
        return steps;
    }
    for (std::size_t i = 0; i < count; ++i) {
        const double t = std::round(static_cast<double>(i) * static_cast<double>(schedule_steps - 1) /
                                    static_cast<double>(count - 1));
        steps.push_back(static_cast<std::uint32_t>(t));
    }
    return steps;
}

inline CalibrationSet generate_calibration(const GeneratorConfig& cfg)
{
    if (cfg.timesteps < 1 || cfg.per_step < 1)
        throw InvalidArgument("calibration needs at least one timestep and one sample per step");
    if (cfg.width < 1 || cfg.tokens < 1)
        throw InvalidArgument("calibration samples need positive width and token count");
    if (cfg.schedule_steps < cfg.timesteps)
        throw InvalidArgument("schedule shorter than the number of selected timesteps");

    const OutlierLayout layout = make_outlier_layout(cfg);
    std::vector<bool> is_carrier(cfg.width, false);
    std::vector<double> gain(cfg.width, 0.0);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        is_carrier[layout.carriers[i]] = true;
        gain[layout.carriers[i]] = layout.gains[i];
    }

    CalibrationSet set;
    set.timesteps = cfg.timesteps;
    set.per_step = cfg.per_step;
    set.width = cfg.width;
    set.tokens = cfg.tokens;
    set.seed = cfg.seed;

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::uint32_t step : uniform_timesteps(cfg.timesteps, cfg.schedule_steps)) {
        const double mult = timestep_range_multiplier(cfg, step);
        for (std::size_t s = 0; s < cfg.per_step; ++s) {
            Tensor x(cfg.tokens, cfg.width);
            for (std::size_t r = 0; r < cfg.tokens; ++r)
                for (std::size_t c = 0; c < cfg.width; ++c) {
                    const double z = normal(rng);
                    x.at(r, c) = mult * (is_carrier[c] ? gain[c] * z : z);
                }
            set.samples.push_back({step, std::move(x)});
        }
    }
    for (std::size_t i = set.samples.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(set.samples[i - 1], set.samples[pick(rng)]);
    }
    return set;
}

struct CapturedActivation {
    std::uint32_t timestep = 0;
    Tensor values;
};

/// Full-precision post-GELU activations of one block, one entry per sample.
inline std::vector<CapturedActivation> post_gelu_capture(const ToyDiTModel& model,
                                                         const CalibrationSet& calib,
                                                         std::size_t block_index = 0)
{
    if (block_index >= model.blocks.size())
        throw InvalidArgument("block index out of range");
    std::vector<CapturedActivation> out;
    out.reserve(calib.samples.size());
    for (const auto& sample : calib.samples) {
        Tensor h = sample.input;
        for (std::size_t b = 0; b < block_index; ++b)
            h = block_forward(model.blocks[b], h);
        out.push_back({sample.timestep, block_trace(model.blocks[block_index], h).post_gelu});
    }
    return out;
}

} // namespace taqdit

#endif // TAQDIT_TOY_DIT_HPP_
