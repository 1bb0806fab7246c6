// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

// taqdit command-line front end.
//
// Exit codes:
//   0  success
//   1  usage, IO or any other failure
//   2  bad config key or value
//   3  incompatible options
//   4  corrupted file (bad magic, CRC mismatch, truncated or malformed)
//   5  unsupported file format version

#include <taqdit/config.hpp>
#include <taqdit/report.hpp>
#include <taqdit/serialization.hpp>
#include <taqdit/taqdit.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace {

using namespace taqdit;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIncompatible = 3;
constexpr int kExitCorrupt = 4;
constexpr int kExitVersion = 5;

std::uint64_t env_seed()
{
    const char* s = std::getenv("TAQ_SEED");
    if (s == nullptr || *s == '\0')
        return 0;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (s[pos] != '\0')
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("TAQ_SEED", std::string("not an unsigned integer: ") + s);
    }
}

ToyDiTModel float_model(std::size_t width, std::size_t tokens, std::size_t blocks,
                        std::uint64_t seed)
{
    GeneratorConfig g;
    g.width = width;
    g.tokens = tokens;
    g.seed = seed;
    return make_toy_model(g, blocks);
}

ToyDiTModel float_model(const CalibrationFile& f)
{
    return float_model(f.set.width, f.set.tokens, f.blocks, f.set.seed);
}

struct SchemeFlags {
    int bits_w = 4;
    int bits_a = 8;
    std::string mode = "joint";
    std::string shift = "momentum";
    std::string migration = "migrate";
    std::optional<std::size_t> topk;
    std::size_t iters = 500;
    std::size_t batch = 16;
    std::optional<std::uint64_t> seed;
    bool optimize_factors = false;

    void add_to(CLI::App& app, bool with_shift)
    {
        app.add_option("--bits-w", bits_w, "weight bit-width")->capture_default_str();
        app.add_option("--bits-a", bits_a, "activation bit-width")->capture_default_str();
        app.add_option("--mode", mode, "reconstruction mode")
            ->check(CLI::IsMember({"joint", "separate"}))
            ->capture_default_str();
        if (with_shift)
            app.add_option("--shift", shift, "pf_out input shifting")
                ->check(CLI::IsMember({"none", "static", "momentum", "dynamic"}))
                ->capture_default_str();
        app.add_option("--migration", migration, "outlier channel handling")
            ->check(CLI::IsMember({"none", "migrate", "split"}))
            ->capture_default_str();
        app.add_option("--topk", topk, "number of outlier channels (default ceil(1% of 4d))");
        app.add_option("--iters", iters, "reconstruction iterations per unit, 0 disables")
            ->capture_default_str();
        app.add_option("--batch", batch, "calibration samples per reconstruction batch")
            ->capture_default_str();
        app.add_option("--seed", seed, "reconstruction seed (falls back to TAQ_SEED, then 0)");
        app.add_flag("--optimize-factors", optimize_factors,
                     "optimize shifts and migration factors during reconstruction");
    }

    PipelineConfig pipeline() const
    {
        static const std::map<std::string, ShiftMode> shifts = {{"none", ShiftMode::None},
                                                               {"static", ShiftMode::Static},
                                                               {"momentum", ShiftMode::Momentum},
                                                               {"dynamic", ShiftMode::Dynamic}};
        static const std::map<std::string, MigrationKind> kinds = {
            {"none", MigrationKind::None},
            {"migrate", MigrationKind::Migrate},
            {"split", MigrationKind::Split}};
        PipelineConfig pc;
        pc.bits_w = bits_w;
        pc.bits_a = bits_a;
        pc.shift = shifts.at(shift);
        pc.migration = kinds.at(migration);
        pc.topk = topk;
        pc.reconstruct = iters > 0;
        pc.recon.mode = mode == "joint" ? ReconMode::Joint : ReconMode::Separate;
        pc.recon.iterations = iters > 0 ? iters : 1;
        pc.recon.batch_size = batch;
        pc.recon.seed = seed ? *seed : env_seed();
        pc.recon.optimize_migration_factors = optimize_factors;
        // Split needs integer factors whatever the iteration budget.
        if (pc.migration == MigrationKind::Split && optimize_factors)
            throw IncompatibleOptions("--migration split cannot be combined with --optimize-factors");
        pc.validate();
        return pc;
    }
};

int run_calibrate(const std::optional<std::string>& config_path, const std::string& out,
                  const std::optional<std::uint64_t>& seed_flag)
{
    ProblemConfig pc = config_path ? load_config(*config_path) : ProblemConfig{};
    if (seed_flag)
        pc.seed = seed_flag;
    const std::uint64_t seed = pc.seed ? *pc.seed : env_seed();
    const GeneratorConfig g = pc.generator(seed);

    CalibrationFile file;
    file.set = generate_calibration(g);
    file.blocks = pc.blocks;
    save_calibration(out, file);

    // Per-step ranges of the input and of the first block's post-GELU activations.
    const ToyDiTModel fp = make_toy_model(g, pc.blocks);
    std::printf("calibration: %zu timesteps x %zu samples, d=%zu, T=%zu, seed=%llu -> %s\n",
                g.timesteps, g.per_step, g.width, g.tokens, static_cast<unsigned long long>(seed),
                out.c_str());
    std::printf("%8s %12s %12s %12s %12s\n", "timestep", "in_min", "in_max", "gelu_min", "gelu_max");
    for (const auto& [tag, idx] : group_by_timestep(file.set)) {
        ChannelStats in(1), hidden(1);
        for (std::size_t i : idx) {
            const Tensor& x = file.set.samples[i].input;
            in.add(Tensor({x.size(), 1}, x.values()));
            const Tensor h = block_trace(fp.blocks[0], x).post_gelu;
            hidden.add(Tensor({h.size(), 1}, h.values()));
        }
        std::printf("%8u %12.5g %12.5g %12.5g %12.5g\n", tag, in.lo[0], in.hi[0], hidden.lo[0],
                    hidden.hi[0]);
    }
    return kExitOk;
}

void print_eval(const EvalReport& rep)
{
    std::printf("%6s %14s %12s %14s %10s\n", "block", "output_mse", "sqnr_db", "pf_out_scale",
                "online");
    for (std::size_t b = 0; b < rep.blocks.size(); ++b) {
        const BlockEval& e = rep.blocks[b];
        std::printf("%6zu %14.6e %12.4f %14.6e %10zu\n", b, e.output_mse, e.output_sqnr_db,
                    e.pf_out_input_scale, e.online_shift_computations);
    }
}

int run_quantize(const std::string& calib_path, const std::string& out,
                 const std::optional<std::string>& prefix, const SchemeFlags& flags)
{
    const PipelineConfig pc = flags.pipeline();
    const CalibrationFile calib = load_calibration(calib_path);
    const ToyDiTModel fp = float_model(calib);
    const PipelineResult res = quantize_model(fp, calib.set, pc);
    save_model(out, res.model);

    const EvalReport rep = evaluate(res.model, fp, calib.set);
    std::printf("quantized W%dA%d, shift=%s, migration=%s, mode=%s, iters=%zu -> %s\n", pc.bits_w,
                pc.bits_a, shift_mode_name(pc.shift), migration_kind_name(pc.migration),
                pc.reconstruct ? recon_mode_name(pc.recon.mode) : "off",
                pc.reconstruct ? pc.recon.iterations : std::size_t{0}, out.c_str());
    for (const ReconTrace& t : res.block_traces)
        std::printf("block %zu reconstruction loss %.6e -> %.6e\n", t.block_id, t.initial_loss(),
                    t.final_loss());
    print_eval(rep);
    if (prefix) {
        write_eval_reports(*prefix, rep);
        write_trace_report(*prefix, res.block_traces);
    }
    return kExitOk;
}

int run_compare(const std::string& calib_path, const SchemeFlags& flags)
{
    SchemeFlags f = flags;
    f.shift = "momentum";
    const PipelineConfig pc = f.pipeline();
    const CalibrationFile calib = load_calibration(calib_path);
    const ToyDiTModel fp = float_model(calib);
    const CompareReport cmp = compare_static_dynamic(fp, calib.set, pc);
    std::printf("%-10s %16s %12s %22s\n", "shift", "block_output_mse", "seconds",
                "online_shift_updates");
    std::printf("%-10s %16.6e %12.4f %22zu\n", "static", cmp.static_mse, cmp.static_seconds,
                cmp.static_online_computations);
    std::printf("%-10s %16.6e %12.4f %22zu\n", "dynamic", cmp.dynamic_mse, cmp.dynamic_seconds,
                cmp.dynamic_online_computations);
    std::printf("static/dynamic mse ratio: %.6f\n", cmp.ratio());
    return kExitOk;
}

int run_eval(const std::string& model_path, const std::string& calib_path,
             const std::optional<std::string>& prefix)
{
    const QuantizedModel qm = load_model(model_path);
    const CalibrationFile calib = load_calibration(calib_path);
    if (calib.set.width != qm.width || calib.set.seed != qm.seed || calib.blocks != qm.blocks.size())
        throw InvalidArgument("calibration file does not belong to this model");
    const ToyDiTModel fp = float_model(calib);
    const EvalReport rep = evaluate(qm, fp, calib.set);
    print_eval(rep);
    if (prefix)
        write_eval_reports(*prefix, rep);
    return kExitOk;
}

int exit_code(const FormatError& e)
{
    switch (e.kind()) {
    case FormatError::Kind::Io: return kExitFailure;
    case FormatError::Kind::Version: return kExitVersion;
    case FormatError::Kind::BadMagic:
    case FormatError::Kind::Crc:
    case FormatError::Kind::Truncated:
    case FormatError::Kind::Malformed: return kExitCorrupt;
    }
    return kExitFailure;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"taqdit: post-training quantization of a toy diffusion transformer"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::string calib_out = "calib.taqc";
    std::optional<std::uint64_t> calib_seed;
    auto* calibrate = app.add_subcommand("calibrate", "generate a calibration set");
    calibrate->add_option("config", config_path, "key = value config file");
    calibrate->add_option("-o,--output", calib_out, "calibration file")->capture_default_str();
    calibrate->add_option("--seed", calib_seed, "overrides the config seed and TAQ_SEED");

    std::string calib_in, model_out = "model.taqm";
    std::optional<std::string> report_prefix;
    SchemeFlags qflags;
    auto* quant = app.add_subcommand("quantize", "quantize the toy model on a calibration set");
    quant->add_option("calibration", calib_in, "calibration file")->required();
    quant->add_option("-o,--output", model_out, "model file")->capture_default_str();
    quant->add_option("--report", report_prefix, "prefix for the CSV reports");
    qflags.add_to(*quant, true);

    std::string cmp_calib;
    SchemeFlags cflags;
    cflags.iters = 0;
    auto* compare = app.add_subcommand("compare", "static momentum shift against dynamic shifting");
    compare->add_option("calibration", cmp_calib, "calibration file")->required();
    cflags.add_to(*compare, false);

    std::string eval_model, eval_calib;
    std::optional<std::string> eval_prefix;
    auto* eval = app.add_subcommand("eval", "replay a calibration set through a saved model");
    eval->add_option("model", eval_model, "model file")->required();
    eval->add_option("calibration", eval_calib, "calibration file")->required();
    eval->add_option("--report", eval_prefix, "prefix for the CSV reports");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitFailure;
    }

    try {
        if (calibrate->parsed())
            return run_calibrate(config_path, calib_out, calib_seed);
        if (quant->parsed())
            return run_quantize(calib_in, model_out, report_prefix, qflags);
        if (compare->parsed())
            return run_compare(cmp_calib, cflags);
        if (eval->parsed())
            return run_eval(eval_model, eval_calib, eval_prefix);
    } catch (const ConfigError& e) {
        std::cerr << "config error: key '" << e.key() << "': " << e.what() << '\n';
        return kExitConfig;
    } catch (const IncompatibleOptions& e) {
        std::cerr << "incompatible options: " << e.what() << '\n';
        return kExitIncompatible;
    } catch (const FormatError& e) {
        std::cerr << "file error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
