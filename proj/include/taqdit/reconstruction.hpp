// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_RECONSTRUCTION_HPP_
#define TAQDIT_RECONSTRUCTION_HPP_

#include <taqdit/quantizer.hpp>
#include <taqdit/tensor.hpp>
#include <taqdit/transforms.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace taqdit {

enum class ReconMode : std::uint8_t { Joint = 0, Separate = 1 };
enum class ReconLoss : std::uint8_t { MSE = 0 };

inline const char* recon_mode_name(ReconMode m) noexcept
{
    return m == ReconMode::Joint ? "joint" : "separate";
}

struct ReconConfig {
    ReconMode mode = ReconMode::Joint;
    ReconLoss loss = ReconLoss::MSE;
    double learning_rate = 1e-3;
    std::size_t iterations = 500;
    std::size_t batch_size = 32; // calibration samples per block, drawn once from the seed
    std::uint64_t seed = 0;
    bool optimize_migration_factors = false;
    double drop_probability = 0.0; // reserved; only 0 is supported

    void validate() const
    {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw InvalidArgument("learning rate must be positive");
        if (iterations < 1)
            throw InvalidArgument("reconstruction needs at least one iteration");
        if (batch_size < 1)
            throw InvalidArgument("reconstruction batch must hold at least one sample");
        if (drop_probability != 0.0)
            throw InvalidArgument("activation dropping is not implemented");
    }
};

/// What a parameter is; decides its projection bound and when it trains.
enum class ParamKind : std::uint8_t { WeightScale, ActivationScale, Shift, Factor };

inline double lower_bound(ParamKind k) noexcept
{
    switch (k) {
    case ParamKind::WeightScale:
    case ParamKind::ActivationScale: return kScaleEpsilon;
    case ParamKind::Shift: return -std::numeric_limits<double>::infinity();
    case ParamKind::Factor: return 1.0;
    }
    return 0.0;
}

/// Which quantizers are active in a forward pass.
struct QuantSwitch {
    bool weights = true;
    bool activations = true;
};

/// A reconstructable unit: one linear layer or one feedforward pair.
///
/// The loss is the MSE between the unit output under the current
/// parameters and a fixed full-precision target. Gradients use the
/// straight-through estimator with zero points held fixed.
class ReconUnit {
public:
    virtual ~ReconUnit() = default;

    virtual const std::vector<ParamKind>& kinds() const = 0;
    virtual double loss(std::span<const double> params, QuantSwitch sw) const = 0;
    virtual double loss_and_gradient(std::span<const double> params, std::span<double> grad,
                                     QuantSwitch sw) const = 0;

    std::size_t parameter_count() const { return kinds().size(); }
};

namespace detail {

inline QuantParams with_scales(const QuantParams& base, std::span<const double> scales)
{
    QuantParams p = base;
    p.scales.assign(scales.begin(), scales.end());
    return p;
}

/// Mean squared error and its gradient 2 (y - t) / n.
inline double mse_with_grad(const Tensor& y, const Tensor& target, Tensor& dy)
{
    const double n = static_cast<double>(y.size());
    dy = Tensor(y.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - target[i];
        acc += d * d;
        dy[i] = 2.0 * d / n;
    }
    return acc / n;
}

inline void require_scales(std::span<const double> s, const char* what)
{
    for (double v : s)
        if (!(v > 0.0))
            throw NumericError(std::string(what) + " scale is not positive");
}

} // namespace detail

/// Y = Q(A) Q(W) + b against the full-precision A W + b.
class LinearUnit final : public ReconUnit {
public:
    LinearUnit(Tensor input, LinearLayer layer, Tensor target, QuantParams weight_params,
               QuantParams act_params)
        : x_(std::move(input)), layer_(std::move(layer)), target_(std::move(target)),
          wp_(std::move(weight_params)), ap_(std::move(act_params))
    {
        if (x_.cols() != layer_.in_features() || target_.rows() != x_.rows() ||
            target_.cols() != layer_.out_features())
            throw DimensionError("linear unit operands disagree");
        wp_.validate_for(layer_.in_features(), layer_.out_features());
        ap_.validate_for(x_.rows(), x_.cols());
        kinds_.assign(wp_.group_count(), ParamKind::WeightScale);
        kinds_.insert(kinds_.end(), ap_.group_count(), ParamKind::ActivationScale);
    }

    const std::vector<ParamKind>& kinds() const override { return kinds_; }

    std::vector<double> initial_parameters() const
    {
        std::vector<double> p = wp_.scales;
        p.insert(p.end(), ap_.scales.begin(), ap_.scales.end());
        return p;
    }

    QuantParams weight_params(std::span<const double> p) const
    {
        return detail::with_scales(wp_, p.subspan(0, wp_.group_count()));
    }
    QuantParams act_params(std::span<const double> p) const
    {
        return detail::with_scales(ap_, p.subspan(wp_.group_count(), ap_.group_count()));
    }

    double loss(std::span<const double> p, QuantSwitch sw) const override
    {
        const Tensor y = forward(p, sw, nullptr, nullptr);
        return mean_squared_error(y, target_);
    }

    double loss_and_gradient(std::span<const double> p, std::span<double> grad,
                             QuantSwitch sw) const override
    {
        Tensor xq, wq;
        const Tensor y = forward(p, sw, &xq, &wq);
        Tensor dy;
        const double l = detail::mse_with_grad(y, target_, dy);
        std::fill(grad.begin(), grad.end(), 0.0);
        const std::size_t nw = wp_.group_count();
        if (sw.weights) {
            const Tensor dwq = matmul_tn(xq, dy);
            const FakeQuantGrad g = fake_quantize_backward(layer_.weight, weight_params(p), dwq);
            std::copy(g.scales.begin(), g.scales.end(), grad.begin());
        }
        if (sw.activations) {
            const Tensor dxq = matmul_nt(dy, wq);
            const FakeQuantGrad g = fake_quantize_backward(x_, act_params(p), dxq);
            std::copy(g.scales.begin(), g.scales.end(), grad.begin() + static_cast<std::ptrdiff_t>(nw));
        }
        return l;
    }

private:
    Tensor forward(std::span<const double> p, QuantSwitch sw, Tensor* xq_out, Tensor* wq_out) const
    {
        detail::require_scales(p, "linear unit");
        Tensor wq = sw.weights ? fake_quantize(layer_.weight, weight_params(p)) : layer_.weight;
        Tensor xq = sw.activations ? fake_quantize(x_, act_params(p)) : x_;
        Tensor y = add_row_vector(matmul(xq, wq), layer_.bias.values());
        if (xq_out)
            *xq_out = std::move(xq);
        if (wq_out)
            *wq_out = std::move(wq);
        return y;
    }

    Tensor x_;
    LinearLayer layer_;
    Tensor target_;
    QuantParams wp_;
    QuantParams ap_;
    std::vector<ParamKind> kinds_;
};

/// Second-layer input side of a feedforward unit: shift, migration plan and
/// how the plan is applied.
struct FeedForwardTransform {
    std::vector<double> shift;
    MigrationPlan plan;
    MigrationKind kind = MigrationKind::None;
};

/// X -> Q(X) Q(W1) + b1 -> gelu -> shift -> migrate or split -> Q(.) Q(W2') + b2'
/// against gelu(X W1 + b1) W2 + b2.
///
/// W2' is W2 with rows scaled (migration) or repeated (splitting); b2' = v W2 + b2.
/// Parameter layout: S_A1, S_W1, S_A2, S_W2, v, then the migration factors
/// when the plan migrates.
class FeedForwardUnit final : public ReconUnit {
public:
    FeedForwardUnit(Tensor input, LinearLayer pf_in, LinearLayer pf_out, Tensor target,
                    QuantParams w1_params, QuantParams a1_params, QuantParams w2_params,
                    QuantParams a2_params, FeedForwardTransform transform)
        : x_(std::move(input)), l1_(std::move(pf_in)), l2_(std::move(pf_out)),
          target_(std::move(target)), w1p_(std::move(w1_params)), a1p_(std::move(a1_params)),
          w2p_(std::move(w2_params)), a2p_(std::move(a2_params)), tf_(std::move(transform))
    {
        const std::size_t hidden = l1_.out_features();
        if (x_.cols() != l1_.in_features() || l2_.in_features() != hidden ||
            target_.rows() != x_.rows() || target_.cols() != l2_.out_features())
            throw DimensionError("feedforward unit operands disagree");
        if (tf_.shift.size() != hidden)
            throw DimensionError("shift length does not match the hidden width");
        tf_.plan.validate(hidden);
        const ChannelMap map = ChannelMap::build(hidden, tf_.plan, tf_.kind);
        w1p_.validate_for(l1_.in_features(), hidden);
        a1p_.validate_for(x_.rows(), x_.cols());
        w2p_.validate_for(map.width(), l2_.out_features());
        a2p_.validate_for(x_.rows(), map.width());

        kinds_.insert(kinds_.end(), a1p_.group_count(), ParamKind::ActivationScale);
        kinds_.insert(kinds_.end(), w1p_.group_count(), ParamKind::WeightScale);
        kinds_.insert(kinds_.end(), a2p_.group_count(), ParamKind::ActivationScale);
        kinds_.insert(kinds_.end(), w2p_.group_count(), ParamKind::WeightScale);
        kinds_.insert(kinds_.end(), hidden, ParamKind::Shift);
        if (tf_.kind == MigrationKind::Migrate)
            kinds_.insert(kinds_.end(), tf_.plan.size(), ParamKind::Factor);
    }

    const std::vector<ParamKind>& kinds() const override { return kinds_; }

    std::vector<double> initial_parameters() const
    {
        std::vector<double> p;
        for (const auto* q : {&a1p_, &w1p_, &a2p_, &w2p_})
            p.insert(p.end(), q->scales.begin(), q->scales.end());
        p.insert(p.end(), tf_.shift.begin(), tf_.shift.end());
        if (tf_.kind == MigrationKind::Migrate)
            p.insert(p.end(), tf_.plan.factors.begin(), tf_.plan.factors.end());
        return p;
    }

    struct Unpacked {
        QuantParams a1, w1, a2, w2;
        FeedForwardTransform transform;
    };

    Unpacked unpack(std::span<const double> p) const
    {
        std::size_t o = 0;
        auto take = [&](std::size_t n) {
            auto s = p.subspan(o, n);
            o += n;
            return s;
        };
        Unpacked u;
        u.a1 = detail::with_scales(a1p_, take(a1p_.group_count()));
        u.w1 = detail::with_scales(w1p_, take(w1p_.group_count()));
        u.a2 = detail::with_scales(a2p_, take(a2p_.group_count()));
        u.w2 = detail::with_scales(w2p_, take(w2p_.group_count()));
        const auto v = take(l1_.out_features());
        u.transform = tf_;
        u.transform.shift.assign(v.begin(), v.end());
        if (tf_.kind == MigrationKind::Migrate) {
            const auto m = take(tf_.plan.size());
            u.transform.plan.factors.assign(m.begin(), m.end());
        }
        return u;
    }

    double loss(std::span<const double> p, QuantSwitch sw) const override
    {
        Cache c;
        forward(p, sw, c);
        return mean_squared_error(c.y, target_);
    }

    double loss_and_gradient(std::span<const double> p, std::span<double> grad,
                             QuantSwitch sw) const override
    {
        Cache c;
        forward(p, sw, c);
        Tensor dy;
        const double l = detail::mse_with_grad(c.y, target_, dy);
        std::fill(grad.begin(), grad.end(), 0.0);

        const std::size_t hidden = l1_.out_features(), co = l2_.out_features();
        const std::size_t n = x_.rows(), w = c.map.width();
        const std::size_t o_a1 = 0, o_w1 = o_a1 + a1p_.group_count();
        const std::size_t o_a2 = o_w1 + w1p_.group_count(), o_w2 = o_a2 + a2p_.group_count();
        const std::size_t o_v = o_w2 + w2p_.group_count(), o_m = o_v + hidden;

        // Second layer.
        Tensor dd = matmul_nt(dy, c.w2q);
        if (sw.activations) {
            FakeQuantGrad g = fake_quantize_backward(c.d, c.u.a2, dd);
            std::copy(g.scales.begin(), g.scales.end(), grad.begin() + static_cast<std::ptrdiff_t>(o_a2));
            dd = std::move(g.input);
        }
        Tensor dw2m = matmul_tn(c.dq, dy);
        if (sw.weights) {
            FakeQuantGrad g = fake_quantize_backward(c.w2m, c.u.w2, dw2m);
            std::copy(g.scales.begin(), g.scales.end(), grad.begin() + static_cast<std::ptrdiff_t>(o_w2));
            dw2m = std::move(g.input);
        }

        // Through the channel map and the shift.
        Tensor dg(n, hidden);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t e = 0; e < w; ++e)
                dg.at(r, c.map.source[e]) += dd.at(r, e) / c.map.act_divisor[e];
        std::vector<double> dy_col(co, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < co; ++j)
                dy_col[j] += dy.at(r, j);
        for (std::size_t ch = 0; ch < hidden; ++ch) {
            double acc = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                acc -= dg.at(r, ch);
            for (std::size_t j = 0; j < co; ++j)
                acc += dy_col[j] * l2_.weight.at(ch, j);
            grad[o_v + ch] = acc;
        }
        if (tf_.kind == MigrationKind::Migrate) {
            for (std::size_t e = 0; e < w; ++e) {
                if (c.map.plan_slot[e] < 0)
                    continue;
                const auto slot = static_cast<std::size_t>(c.map.plan_slot[e]);
                const double m = c.map.act_divisor[e];
                const std::size_t src = c.map.source[e];
                double acc = 0.0;
                for (std::size_t r = 0; r < n; ++r)
                    acc -= dd.at(r, e) * c.d.at(r, e) / m;
                for (std::size_t j = 0; j < co; ++j)
                    acc += dw2m.at(e, j) * l2_.weight.at(src, j);
                grad[o_m + slot] = acc;
            }
        }

        // GELU and the first layer.
        Tensor dh = std::move(dg);
        for (std::size_t i = 0; i < dh.size(); ++i)
            dh[i] *= gelu_derivative(c.h[i]);
        if (sw.weights) {
            const Tensor dw1q = matmul_tn(c.x1, dh);
            const FakeQuantGrad g = fake_quantize_backward(l1_.weight, c.u.w1, dw1q);
            std::copy(g.scales.begin(), g.scales.end(), grad.begin() + static_cast<std::ptrdiff_t>(o_w1));
        }
        if (sw.activations) {
            const Tensor dx1 = matmul_nt(dh, c.w1q);
            const FakeQuantGrad g = fake_quantize_backward(x_, c.u.a1, dx1);
            std::copy(g.scales.begin(), g.scales.end(), grad.begin() + static_cast<std::ptrdiff_t>(o_a1));
        }
        return l;
    }

private:
    struct Cache {
        Unpacked u;
        ChannelMap map;
        Tensor x1, w1q, h, d, dq, w2m, w2q, y;
    };

    void forward(std::span<const double> p, QuantSwitch sw, Cache& c) const
    {
        c.u = unpack(p);
        detail::require_scales(c.u.a1.scales, "feedforward");
        detail::require_scales(c.u.w1.scales, "feedforward");
        detail::require_scales(c.u.a2.scales, "feedforward");
        detail::require_scales(c.u.w2.scales, "feedforward");
        const std::vector<double>& v = c.u.transform.shift;
        c.map = ChannelMap::build(l1_.out_features(), c.u.transform.plan, c.u.transform.kind);

        c.x1 = sw.activations ? fake_quantize(x_, c.u.a1) : x_;
        c.w1q = sw.weights ? fake_quantize(l1_.weight, c.u.w1) : l1_.weight;
        c.h = add_row_vector(matmul(c.x1, c.w1q), l1_.bias.values());

        const std::size_t n = x_.rows(), w = c.map.width();
        c.d = Tensor(n, w);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t e = 0; e < w; ++e) {
                const std::size_t src = c.map.source[e];
                c.d.at(r, e) = (gelu(c.h.at(r, src)) - v[src]) / c.map.act_divisor[e];
            }
        c.w2m = c.map.map_weight(l2_.weight);
        c.dq = sw.activations ? fake_quantize(c.d, c.u.a2) : c.d;
        c.w2q = sw.weights ? fake_quantize(c.w2m, c.u.w2) : c.w2m;
        const LinearLayer folded = fold_shift_into_bias(l2_, v);
        c.y = add_row_vector(matmul(c.dq, c.w2q), folded.bias.values());
    }

    Tensor x_;
    LinearLayer l1_, l2_;
    Tensor target_;
    QuantParams w1p_, a1p_, w2p_, a2p_;
    FeedForwardTransform tf_;
    std::vector<ParamKind> kinds_;
};

/// Mean squared difference between Q(A) Q(W) + b and A W + b.
inline double block_loss(const LinearLayer& layer, const Tensor& a, const QuantParams& weight_params,
                         const QuantParams& act_params)
{
    const Tensor fp = linear_forward(layer, a);
    LinearUnit unit(a, layer, fp, weight_params, act_params);
    return unit.loss(unit.initial_parameters(), {});
}

/// STE gradient of a unit's loss with respect to all of its parameters.
inline std::vector<double> ste_gradient(const ReconUnit& unit, std::span<const double> params,
                                        QuantSwitch sw = {})
{
    std::vector<double> g(unit.parameter_count());
    unit.loss_and_gradient(params, g, sw);
    return g;
}

/// Adaptive-moment optimizer with bias correction.
class Adam {
public:
    explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : m_(n, 0.0), v_(n, 0.0), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps)
    {
    }

    void step(std::span<double> params, std::span<const double> grad)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    std::vector<double> m_, v_;
    double lr_, b1_, b2_, eps_;
    std::uint64_t t_ = 0;
};

/// Loss recorded at every iteration of one block (or unit).
///
/// Separate-mode traces hold the weight phase followed by the activation
/// phase; `activation_phase_begin` marks the boundary (0 for joint traces).
struct ReconTrace {
    std::size_t block_id = 0;
    std::string unit; // "block" for per-block sums
    std::vector<double> losses;
    std::size_t activation_phase_begin = 0;
    std::vector<double> final_parameters;
    bool converged = false; // final loss <= initial loss

    double initial_loss() const { return losses.empty() ? 0.0 : losses.front(); }
    double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }

    std::vector<double> activation_phase() const
    {
        return {losses.begin() + static_cast<std::ptrdiff_t>(activation_phase_begin), losses.end()};
    }
};

/// Runs `iterations` loss evaluations with an Adam step between consecutive
/// ones; only parameters with `trainable` set move. Scales are projected to
/// [eps, inf) and factors to [1, inf) after every step.
inline std::vector<double> optimize_unit(const ReconUnit& unit, std::vector<double>& params,
                                         const std::vector<bool>& trainable, QuantSwitch sw,
                                         const ReconConfig& cfg, const std::string& where)
{
    const std::size_t n = unit.parameter_count();
    if (params.size() != n || trainable.size() != n)
        throw DimensionError("parameter vector does not match the unit");
    const auto& kinds = unit.kinds();
    Adam opt(n, cfg.learning_rate);
    std::vector<double> grad(n), losses;
    losses.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double l = unit.loss_and_gradient(params, grad, sw);
        if (!std::isfinite(l))
            throw NumericError("non-finite reconstruction loss in " + where + " at iteration " +
                               std::to_string(it));
        losses.push_back(l);
        if (it + 1 == cfg.iterations)
            break;
        for (std::size_t i = 0; i < n; ++i)
            if (!trainable[i])
                grad[i] = 0.0;
        std::vector<double> before = params;
        opt.step(params, grad);
        for (std::size_t i = 0; i < n; ++i) {
            if (!trainable[i])
                params[i] = before[i];
            params[i] = std::max(params[i], lower_bound(kinds[i]));
        }
    }
    return losses;
}

/// Reconstructs one unit in the configured mode and returns its trace.
/// `allowed`, when given, removes parameters from training altogether.
inline ReconTrace reconstruct_unit(const ReconUnit& unit, std::vector<double>& params,
                                   const ReconConfig& cfg, const std::string& where,
                                   const std::vector<bool>* allowed = nullptr)
{
    cfg.validate();
    const auto& kinds = unit.kinds();
    auto mask = [&](bool ws, bool as) {
        std::vector<bool> m(kinds.size());
        for (std::size_t i = 0; i < kinds.size(); ++i) {
            switch (kinds[i]) {
            case ParamKind::WeightScale: m[i] = ws; break;
            case ParamKind::ActivationScale: m[i] = as; break;
            case ParamKind::Shift:
            case ParamKind::Factor: m[i] = as && cfg.optimize_migration_factors; break;
            }
            if (allowed)
                m[i] = m[i] && (*allowed)[i];
        }
        return m;
    };
    ReconTrace trace;
    if (cfg.mode == ReconMode::Joint) {
        trace.losses = optimize_unit(unit, params, mask(true, true), {true, true}, cfg, where);
    } else {
        trace.losses = optimize_unit(unit, params, mask(true, false), {true, false}, cfg,
                                     where + " (weight phase)");
        trace.activation_phase_begin = trace.losses.size();
        const auto act = optimize_unit(unit, params, mask(false, true), {true, true}, cfg,
                                       where + " (activation phase)");
        trace.losses.insert(trace.losses.end(), act.begin(), act.end());
    }
    trace.unit = where;
    trace.final_parameters = params;
    trace.converged = trace.final_loss() <= trace.losses[trace.activation_phase_begin];
    return trace;
}

/// Fixed, seeded subset of sample indices (all of them if the batch covers the set).
inline std::vector<std::size_t> reconstruction_batch(std::size_t samples, std::size_t batch,
                                                     std::uint64_t seed)
{
    std::vector<std::size_t> idx(samples);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (batch >= samples)
        return idx;
    std::mt19937_64 rng(seed ^ 0x7265636f6eULL);
    for (std::size_t i = samples; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(idx[i - 1], idx[pick(rng)]);
    }
    idx.resize(batch);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace taqdit

#endif // TAQDIT_RECONSTRUCTION_HPP_
