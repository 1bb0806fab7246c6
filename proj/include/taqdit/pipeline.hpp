// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_PIPELINE_HPP_
#define TAQDIT_PIPELINE_HPP_

#include <taqdit/metrics.hpp>
#include <taqdit/quantizer.hpp>
#include <taqdit/reconstruction.hpp>
#include <taqdit/tensor.hpp>
#include <taqdit/toy_dit.hpp>
#include <taqdit/transforms.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace taqdit {

/// How the second feedforward layer's input is shifted.
///
/// Static uses one mid-range over the whole calibration set, Momentum the
/// moving average over timesteps in ascending order. Dynamic stores the
/// momentum state but recomputes the shift from the data of each timestep
/// at evaluation time.
enum class ShiftMode : std::uint8_t { None = 0, Static = 1, Momentum = 2, Dynamic = 3 };

inline const char* shift_mode_name(ShiftMode m) noexcept
{
    switch (m) {
    case ShiftMode::None: return "none";
    case ShiftMode::Static: return "static";
    case ShiftMode::Momentum: return "momentum";
    case ShiftMode::Dynamic: return "dynamic";
    }
    return "?";
}

struct PipelineConfig {
    int bits_w = 4;
    int bits_a = 8;
    ShiftMode shift = ShiftMode::Momentum;
    MigrationKind migration = MigrationKind::Migrate;
    std::optional<std::size_t> topk; // defaults to ceil(1% of 4d)
    double momentum = kDefaultMomentum;
    bool reconstruct = true;
    ReconConfig recon;

    void validate() const
    {
        if (bits_w < kMinBits || bits_w > kMaxBits || bits_a < kMinBits || bits_a > kMaxBits)
            throw InvalidArgument("bit-widths must lie in [" + std::to_string(kMinBits) + ", " +
                                  std::to_string(kMaxBits) + "]");
        if (migration == MigrationKind::Split && reconstruct && recon.optimize_migration_factors)
            throw IncompatibleOptions(
                "channel splitting needs integer factors; it cannot be combined with factor "
                "optimization");
        if (reconstruct)
            recon.validate();
    }
};

/// One deployed linear layer: integer weight codes, float bias, activation quantizer.
struct QuantizedLinear {
    QuantizedTensor weight;
    Tensor bias;
    QuantParams act;

    friend bool operator==(const QuantizedLinear&, const QuantizedLinear&) = default;
};

/// A block after quantization. pf_out holds the migrated or split weight and
/// the bias with the shift folded in.
struct QuantizedBlock {
    ChannelAffine norm1;
    ChannelAffine norm2;
    QuantizedLinear query, key, value, out_proj, pf_in, pf_out;
    ShiftState shift;
    MigrationPlan plan;

    friend bool operator==(const QuantizedBlock&, const QuantizedBlock&) = default;
};

struct QuantizedModel {
    std::size_t width = 0;
    std::size_t tokens = 0;
    std::uint64_t seed = 0; // seed of the toy model and its calibration data
    int bits_w = 4;
    int bits_a = 8;
    ShiftMode shift_mode = ShiftMode::Momentum;
    MigrationKind migration = MigrationKind::None;
    std::vector<QuantizedBlock> blocks;

    friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

/// Quantizer state of one block while it is being calibrated.
struct LayerQuant {
    QuantParams weight;
    QuantParams act;
};

struct BlockQuantState {
    LayerQuant query, key, value, out_proj, pf_in, pf_out;
    ShiftState shift;
    MigrationPlan plan;
};

inline QuantizedLinear freeze_linear(const LinearLayer& layer, const LayerQuant& q)
{
    return {quantize(layer.weight, q.weight), layer.bias, q.act};
}

inline QuantizedBlock freeze_block(const ToyDiTBlock& fp, const BlockQuantState& st,
                                   MigrationKind kind)
{
    QuantizedBlock out;
    out.norm1 = fp.norm1;
    out.norm2 = fp.norm2;
    out.query = freeze_linear(fp.query, st.query);
    out.key = freeze_linear(fp.key, st.key);
    out.value = freeze_linear(fp.value, st.value);
    out.out_proj = freeze_linear(fp.out_proj, st.out_proj);
    out.pf_in = freeze_linear(fp.pf_in, st.pf_in);
    const ChannelMap map = ChannelMap::build(fp.pf_out.in_features(), st.plan, kind);
    out.pf_out.weight = quantize(map.map_weight(fp.pf_out.weight), st.pf_out.weight);
    out.pf_out.bias = fold_shift_into_bias(fp.pf_out, st.shift).bias;
    out.pf_out.act = st.pf_out.act;
    out.shift = st.shift;
    out.plan = st.plan;
    return out;
}

/// A quantized block with its weights dequantized once for repeated use.
struct DeployedBlock {
    QuantizedBlock block;
    Tensor wq, wk, wv, wo, w1, w2;
    ChannelMap map;
};

inline DeployedBlock deploy(const QuantizedBlock& b, MigrationKind kind)
{
    DeployedBlock d;
    d.block = b;
    d.wq = dequantize(b.query.weight);
    d.wk = dequantize(b.key.weight);
    d.wv = dequantize(b.value.weight);
    d.wo = dequantize(b.out_proj.weight);
    d.w1 = dequantize(b.pf_in.weight);
    d.w2 = dequantize(b.pf_out.weight);
    d.map = ChannelMap::build(b.shift.channels(), b.plan, kind);
    if (d.map.width() != d.w2.rows())
        throw DimensionError("migration plan does not match the stored pf_out weight");
    return d;
}

/// Q(a) W + b with W already dequantized.
inline Tensor quantized_linear(const Tensor& a, const QuantParams& act, const Tensor& w,
                               const Tensor& bias)
{
    return add_row_vector(matmul(fake_quantize(a, act), w), bias.values());
}

struct PreFeedForward {
    Tensor mid;       // residual stream after attention
    Tensor post_gelu; // gelu output of the quantized pf_in
};

inline PreFeedForward deployed_pre_feedforward(const DeployedBlock& d, const Tensor& x)
{
    const QuantizedBlock& b = d.block;
    const Tensor a = b.norm1.apply(x);
    const Tensor q = quantized_linear(a, b.query.act, d.wq, b.query.bias);
    const Tensor k = quantized_linear(a, b.key.act, d.wk, b.key.bias);
    const Tensor v = quantized_linear(a, b.value.act, d.wv, b.value.bias);
    const Tensor att = attention(q, k, v);
    PreFeedForward out;
    out.mid = add(x, quantized_linear(att, b.out_proj.act, d.wo, b.out_proj.bias));
    out.post_gelu = gelu(quantized_linear(b.norm2.apply(out.mid), b.pf_in.act, d.w1, b.pf_in.bias));
    return out;
}

/// Shifted post-GELU activations laid out for the expanded pf_out input.
inline Tensor shifted_mapped(const ChannelMap& map, const Tensor& g, std::span<const double> v)
{
    const std::size_t n = g.rows(), w = map.width();
    Tensor out(n, w);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t e = 0; e < w; ++e) {
            const std::size_t src = map.source[e];
            out.at(r, e) = (g.at(r, src) - v[src]) / map.act_divisor[e];
        }
    return out;
}

inline Tensor deployed_finish(const DeployedBlock& d, const PreFeedForward& pre,
                              std::span<const double> shift, const QuantParams& act,
                              const Tensor& bias)
{
    const Tensor in = shifted_mapped(d.map, pre.post_gelu, shift);
    return add(pre.mid, quantized_linear(in, act, d.w2, bias));
}

/// Forward pass with the stored static shift.
inline Tensor deployed_forward(const DeployedBlock& d, const Tensor& x)
{
    const PreFeedForward pre = deployed_pre_feedforward(d, x);
    return deployed_finish(d, pre, d.block.shift.values(), d.block.pf_out.act, d.block.pf_out.bias);
}

/// Per-channel running min / max across tensors.
struct ChannelStats {
    std::vector<double> lo, hi;

    explicit ChannelStats(std::size_t channels)
        : lo(channels, std::numeric_limits<double>::infinity()),
          hi(channels, -std::numeric_limits<double>::infinity())
    {
    }

    void add(const Tensor& t)
    {
        if (t.cols() != lo.size())
            throw DimensionError("channel statistics width mismatch");
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t c = 0; c < t.cols(); ++c) {
                lo[c] = std::min(lo[c], t.at(r, c));
                hi[c] = std::max(hi[c], t.at(r, c));
            }
    }

    std::vector<double> mid_range() const
    {
        std::vector<double> m(lo.size());
        for (std::size_t c = 0; c < m.size(); ++c)
            m[c] = (lo[c] + hi[c]) / 2.0;
        return m;
    }

    std::vector<double> ranges() const
    {
        std::vector<double> r(lo.size());
        for (std::size_t c = 0; c < r.size(); ++c)
            r[c] = hi[c] - lo[c];
        return r;
    }
};

/// Tensor-wise params for a set of tensors via their global extremes.
inline QuantParams tensor_params_over(const std::vector<Tensor>& parts, int bits)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Tensor& t : parts)
        for (double v : t.values()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(lo <= hi))
        throw InvalidArgument("cannot calibrate on empty data");
    return tensor_params_from_range(lo, hi, bits);
}

/// Tensor-wise params of shifted, mapped activations whose per-channel
/// extremes before shifting are `stats`.
inline QuantParams mapped_shift_params(const ChannelStats& stats, std::span<const double> v,
                                       const ChannelMap& map, int bits)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < map.width(); ++e) {
        const std::size_t src = map.source[e];
        lo = std::min(lo, (stats.lo[src] - v[src]) / map.act_divisor[e]);
        hi = std::max(hi, (stats.hi[src] - v[src]) / map.act_divisor[e]);
    }
    return tensor_params_from_range(lo, hi, bits);
}

/// Sample indices grouped by timestep tag, tags ascending.
inline std::map<std::uint32_t, std::vector<std::size_t>> group_by_timestep(const CalibrationSet& calib)
{
    std::map<std::uint32_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < calib.samples.size(); ++i)
        groups[calib.samples[i].timestep].push_back(i);
    return groups;
}

/// Shift values of one block from its post-GELU activations.
inline ShiftState calibrate_shift(const std::vector<Tensor>& post_gelu, const CalibrationSet& calib,
                                  ShiftMode mode, double beta)
{
    const std::size_t channels = post_gelu.front().cols();
    switch (mode) {
    case ShiftMode::None: return ShiftState(channels, beta);
    case ShiftMode::Static: {
        ChannelStats all(channels);
        for (const Tensor& g : post_gelu)
            all.add(g);
        return ShiftState(all.mid_range(), beta, 1);
    }
    case ShiftMode::Momentum:
    case ShiftMode::Dynamic: break;
    }
    ShiftState state(channels, beta);
    for (const auto& [tag, idx] : group_by_timestep(calib)) {
        ChannelStats step(channels);
        for (std::size_t i : idx)
            step.add(post_gelu[i]);
        state = momentum_update(state, step.mid_range());
    }
    return state;
}

struct PipelineResult {
    QuantizedModel model;
    std::vector<ReconTrace> block_traces; // per block, summed over its units
    std::vector<ReconTrace> unit_traces;
};

namespace detail {

inline Tensor gather_rows(const std::vector<Tensor>& parts, const std::vector<std::size_t>& idx)
{
    std::vector<Tensor> picked;
    picked.reserve(idx.size());
    for (std::size_t i : idx)
        picked.push_back(parts[i]);
    return concat_rows(picked);
}

inline void add_into(ReconTrace& sum, const ReconTrace& t)
{
    if (sum.losses.empty()) {
        sum.losses = t.losses;
        sum.activation_phase_begin = t.activation_phase_begin;
        return;
    }
    for (std::size_t i = 0; i < sum.losses.size(); ++i)
        sum.losses[i] += t.losses[i];
}

inline LayerQuant reconstruct_linear(const LinearLayer& layer, const LayerQuant& q,
                                     const std::vector<Tensor>& inputs,
                                     const std::vector<std::size_t>& batch, const ReconConfig& cfg,
                                     const std::string& where, std::vector<ReconTrace>& traces,
                                     std::size_t block_id)
{
    Tensor x = gather_rows(inputs, batch);
    Tensor target = linear_forward(layer, x);
    LinearUnit unit(std::move(x), layer, std::move(target), q.weight, q.act);
    std::vector<double> p = unit.initial_parameters();
    ReconTrace t = reconstruct_unit(unit, p, cfg, where);
    t.block_id = block_id;
    traces.push_back(std::move(t));
    return {unit.weight_params(p), unit.act_params(p)};
}

} // namespace detail

/// Block-sequential post-training quantization of a toy model.
///
/// Every block is calibrated (min/max scales, shift, migration plan) and,
/// when enabled, reconstructed on the quantized outputs of the blocks before
/// it. Within a block the attention projections are handled first, then the
/// output projection, then the feedforward pair.
inline PipelineResult quantize_model(const ToyDiTModel& fp, const CalibrationSet& calib,
                                     const PipelineConfig& cfg)
{
    cfg.validate();
    if (calib.samples.empty())
        throw InvalidArgument("calibration set is empty");
    if (calib.width != fp.width)
        throw DimensionError("calibration width " + std::to_string(calib.width) +
                             " does not match model width " + std::to_string(fp.width));

    PipelineResult res;
    QuantizedModel& qm = res.model;
    qm.width = fp.width;
    qm.tokens = calib.tokens;
    qm.seed = fp.seed;
    qm.bits_w = cfg.bits_w;
    qm.bits_a = cfg.bits_a;
    qm.shift_mode = cfg.shift;
    qm.migration = cfg.migration;

    const std::size_t n = calib.samples.size();
    const std::vector<std::size_t> batch =
        reconstruction_batch(n, cfg.recon.batch_size, cfg.recon.seed);
    std::vector<Tensor> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = calib.samples[i].input;

    const auto weight_params = [&](const Tensor& w) {
        return calibrate_params(w, cfg.bits_w, Granularity::WeightChannelWise);
    };

    for (std::size_t b = 0; b < fp.blocks.size(); ++b) {
        const ToyDiTBlock& blk = fp.blocks[b];
        const std::string tag = "block " + std::to_string(b);
        BlockQuantState st;
        std::vector<ReconTrace> traces;

        std::vector<Tensor> attn_in(n);
        for (std::size_t i = 0; i < n; ++i)
            attn_in[i] = blk.norm1.apply(x[i]);
        const QuantParams qkv_act = tensor_params_over(attn_in, cfg.bits_a);
        st.query = {weight_params(blk.query.weight), qkv_act};
        st.key = {weight_params(blk.key.weight), qkv_act};
        st.value = {weight_params(blk.value.weight), qkv_act};
        if (cfg.reconstruct) {
            st.query = detail::reconstruct_linear(blk.query, st.query, attn_in, batch, cfg.recon,
                                                  tag + " query", traces, b);
            st.key = detail::reconstruct_linear(blk.key, st.key, attn_in, batch, cfg.recon,
                                                tag + " key", traces, b);
            st.value = detail::reconstruct_linear(blk.value, st.value, attn_in, batch, cfg.recon,
                                                  tag + " value", traces, b);
        }

        const Tensor wq = fake_quantize(blk.query.weight, st.query.weight);
        const Tensor wk = fake_quantize(blk.key.weight, st.key.weight);
        const Tensor wv = fake_quantize(blk.value.weight, st.value.weight);
        std::vector<Tensor> attn_out(n);
        for (std::size_t i = 0; i < n; ++i)
            attn_out[i] = attention(quantized_linear(attn_in[i], st.query.act, wq, blk.query.bias),
                                    quantized_linear(attn_in[i], st.key.act, wk, blk.key.bias),
                                    quantized_linear(attn_in[i], st.value.act, wv, blk.value.bias));
        attn_in.clear();
        st.out_proj = {weight_params(blk.out_proj.weight), tensor_params_over(attn_out, cfg.bits_a)};
        if (cfg.reconstruct)
            st.out_proj = detail::reconstruct_linear(blk.out_proj, st.out_proj, attn_out, batch,
                                                     cfg.recon, tag + " out_proj", traces, b);

        const Tensor wo = fake_quantize(blk.out_proj.weight, st.out_proj.weight);
        std::vector<Tensor> pf_input(n);
        for (std::size_t i = 0; i < n; ++i)
            pf_input[i] = blk.norm2.apply(
                add(x[i], quantized_linear(attn_out[i], st.out_proj.act, wo, blk.out_proj.bias)));
        attn_out.clear();
        st.pf_in = {weight_params(blk.pf_in.weight), tensor_params_over(pf_input, cfg.bits_a)};

        const Tensor w1 = fake_quantize(blk.pf_in.weight, st.pf_in.weight);
        std::vector<Tensor> post_gelu(n);
        for (std::size_t i = 0; i < n; ++i)
            post_gelu[i] = gelu(quantized_linear(pf_input[i], st.pf_in.act, w1, blk.pf_in.bias));

        const std::size_t hidden = blk.pf_in.out_features();
        st.shift = calibrate_shift(post_gelu, calib, cfg.shift, cfg.momentum);
        ChannelStats stats(hidden);
        for (const Tensor& g : post_gelu)
            stats.add(g);
        post_gelu.clear();
        if (cfg.migration != MigrationKind::None) {
            const std::size_t k = cfg.topk.value_or(default_outlier_count(hidden));
            std::vector<double> peaks(hidden);
            for (std::size_t c = 0; c < hidden; ++c)
                peaks[c] = std::max(std::abs(stats.lo[c] - st.shift.values()[c]),
                                    std::abs(stats.hi[c] - st.shift.values()[c]));
            const std::vector<double> ranges = stats.ranges();
            st.plan = init_migration_factors(peaks, select_outlier_channels(ranges, k));
        }
        ChannelMap map = ChannelMap::build(hidden, st.plan, cfg.migration);
        st.pf_out = {weight_params(map.map_weight(blk.pf_out.weight)),
                     mapped_shift_params(stats, st.shift.values(), map, cfg.bits_a)};

        if (cfg.reconstruct) {
            Tensor xin = detail::gather_rows(pf_input, batch);
            Tensor target = linear_forward(blk.pf_out, gelu(linear_forward(blk.pf_in, xin)));
            FeedForwardUnit unit(std::move(xin), blk.pf_in, blk.pf_out, std::move(target),
                                 st.pf_in.weight, st.pf_in.act, st.pf_out.weight, st.pf_out.act,
                                 {st.shift.values(), st.plan, cfg.migration});
            std::vector<double> p = unit.initial_parameters();
            std::vector<bool> allowed(p.size(), true);
            if (cfg.shift == ShiftMode::None)
                for (std::size_t i = 0; i < p.size(); ++i)
                    if (unit.kinds()[i] == ParamKind::Shift)
                        allowed[i] = false;
            ReconTrace t = reconstruct_unit(unit, p, cfg.recon, tag + " feedforward", &allowed);
            t.block_id = b;
            traces.push_back(std::move(t));
            const auto u = unit.unpack(p);
            st.pf_in = {u.w1, u.a1};
            st.pf_out = {u.w2, u.a2};
            st.shift.mutable_values() = u.transform.shift;
            st.plan = u.transform.plan;
        }
        pf_input.clear();

        qm.blocks.push_back(freeze_block(blk, st, cfg.migration));
        const DeployedBlock d = deploy(qm.blocks.back(), cfg.migration);
        for (std::size_t i = 0; i < n; ++i)
            x[i] = deployed_forward(d, x[i]);

        if (!traces.empty()) {
            ReconTrace sum;
            sum.block_id = b;
            sum.unit = "block";
            for (const ReconTrace& t : traces)
                detail::add_into(sum, t);
            sum.converged = sum.final_loss() <= sum.losses[sum.activation_phase_begin];
            res.block_traces.push_back(std::move(sum));
            for (ReconTrace& t : traces)
                res.unit_traces.push_back(std::move(t));
        }
    }
    return res;
}

/// Joint reconstruction of every block (scales, and shift values plus
/// migration factors when enabled) on top of the given pipeline settings.
inline PipelineResult reconstruct_joint(const ToyDiTModel& fp, const CalibrationSet& calib,
                                        const ReconConfig& cfg, PipelineConfig base = {})
{
    if (cfg.mode != ReconMode::Joint)
        throw InvalidArgument("reconstruct_joint called with a separate-mode config");
    base.reconstruct = true;
    base.recon = cfg;
    return quantize_model(fp, calib, base);
}

/// Two-phase reconstruction: weight scales with float activations, then
/// activation scales with the weight scales frozen.
inline PipelineResult reconstruct_separate(const ToyDiTModel& fp, const CalibrationSet& calib,
                                           const ReconConfig& cfg, PipelineConfig base = {})
{
    if (cfg.mode != ReconMode::Separate)
        throw InvalidArgument("reconstruct_separate called with a joint-mode config");
    base.reconstruct = true;
    base.recon = cfg;
    return quantize_model(fp, calib, base);
}

struct BlockEval {
    double output_mse = 0.0;
    double output_sqnr_db = 0.0;
    double pf_out_input_scale = 0.0;
    double pf_out_input_mse = 0.0;
    std::size_t online_shift_computations = 0;
    OccupancyReport occupancy;
};

struct EvalReport {
    std::vector<BlockEval> blocks;
    bool dynamic = false;
    std::size_t online_shift_computations = 0;

    double output_mse() const { return blocks.empty() ? 0.0 : blocks.back().output_mse; }
};

struct EvalOptions {
    std::optional<bool> dynamic; // defaults to the model's shift mode
    bool occupancy = true;
};

/// Replays a calibration set through the quantized model and the float
/// model and measures the gap after every block.
///
/// Dynamic evaluation recomputes the pf_out shift, its folded bias and the
/// activation quantizer from the data of each timestep, counting one online
/// shift computation per block and timestep. The fold uses the float pf_out
/// weight of `fp`.
inline EvalReport evaluate(const QuantizedModel& qm, const ToyDiTModel& fp,
                           const CalibrationSet& calib, const EvalOptions& opt = {})
{
    if (qm.blocks.size() != fp.blocks.size() || qm.width != fp.width)
        throw DimensionError("quantized and float models disagree in shape");
    if (calib.width != qm.width)
        throw DimensionError("calibration width does not match the model");
    EvalReport rep;
    rep.dynamic = opt.dynamic.value_or(qm.shift_mode == ShiftMode::Dynamic);

    const std::size_t n = calib.samples.size();
    std::vector<Tensor> xq(n), xf(n);
    for (std::size_t i = 0; i < n; ++i)
        xq[i] = xf[i] = calib.samples[i].input;
    const auto groups = group_by_timestep(calib);

    for (std::size_t b = 0; b < qm.blocks.size(); ++b) {
        const DeployedBlock d = deploy(qm.blocks[b], qm.migration);
        std::vector<PreFeedForward> pre(n);
        for (std::size_t i = 0; i < n; ++i)
            pre[i] = deployed_pre_feedforward(d, xq[i]);

        BlockEval be;
        be.pf_out_input_scale = d.block.pf_out.act.scales[0];
        if (opt.occupancy) {
            std::vector<Tensor> mapped(n);
            for (std::size_t i = 0; i < n; ++i)
                mapped[i] = shifted_mapped(d.map, pre[i].post_gelu, d.block.shift.values());
            const Tensor all = concat_rows(mapped);
            be.occupancy = bin_occupancy(all, d.block.pf_out.act);
            be.pf_out_input_mse = quant_mse(all, d.block.pf_out.act);
        }

        if (rep.dynamic) {
            const std::size_t hidden = d.block.shift.channels();
            for (const auto& [tag, idx] : groups) {
                ChannelStats stats(hidden);
                for (std::size_t i : idx)
                    stats.add(pre[i].post_gelu);
                const std::vector<double> v = stats.mid_range();
                const QuantParams act = mapped_shift_params(stats, v, d.map, qm.bits_a);
                const Tensor bias = fold_shift_into_bias(fp.blocks[b].pf_out, v).bias;
                ++be.online_shift_computations;
                ++rep.online_shift_computations;
                for (std::size_t i : idx)
                    xq[i] = deployed_finish(d, pre[i], v, act, bias);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i)
                xq[i] = deployed_finish(d, pre[i], d.block.shift.values(), d.block.pf_out.act,
                                        d.block.pf_out.bias);
        }

        double err = 0.0, signal = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            xf[i] = block_forward(fp.blocks[b], xf[i]);
            for (std::size_t j = 0; j < xf[i].size(); ++j) {
                const double e = xq[i][j] - xf[i][j];
                err += e * e;
                signal += xf[i][j] * xf[i][j];
            }
            count += xf[i].size();
        }
        be.output_mse = err / static_cast<double>(count);
        be.output_sqnr_db = err == 0.0 ? std::numeric_limits<double>::infinity()
                                       : 10.0 * std::log10(signal / err);
        rep.blocks.push_back(std::move(be));
    }
    return rep;
}

struct CompareReport {
    double static_mse = 0.0;
    double dynamic_mse = 0.0;
    double static_seconds = 0.0;
    double dynamic_seconds = 0.0;
    std::size_t static_online_computations = 0;
    std::size_t dynamic_online_computations = 0;

    double ratio() const { return dynamic_mse > 0.0 ? static_mse / dynamic_mse : 1.0; }
};

/// Static momentum shifting against per-timestep dynamic shifting on one
/// quantized model. Only the treatment of the pf_out input differs.
inline CompareReport compare_static_dynamic(const ToyDiTModel& fp, const CalibrationSet& calib,
                                            PipelineConfig cfg)
{
    using clock = std::chrono::steady_clock;
    cfg.shift = ShiftMode::Momentum;
    const PipelineResult res = quantize_model(fp, calib, cfg);
    CompareReport cmp;
    EvalOptions opt;
    opt.occupancy = false;

    opt.dynamic = false;
    auto t0 = clock::now();
    const EvalReport st = evaluate(res.model, fp, calib, opt);
    auto t1 = clock::now();
    opt.dynamic = true;
    const EvalReport dy = evaluate(res.model, fp, calib, opt);
    auto t2 = clock::now();

    cmp.static_mse = st.output_mse();
    cmp.dynamic_mse = dy.output_mse();
    cmp.static_seconds = std::chrono::duration<double>(t1 - t0).count();
    cmp.dynamic_seconds = std::chrono::duration<double>(t2 - t1).count();
    cmp.static_online_computations = st.online_shift_computations;
    cmp.dynamic_online_computations = dy.online_shift_computations;
    return cmp;
}

} // namespace taqdit

#endif // TAQDIT_PIPELINE_HPP_
