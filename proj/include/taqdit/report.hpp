// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_REPORT_HPP_
#define TAQDIT_REPORT_HPP_

#include <taqdit/error.hpp>
#include <taqdit/metrics.hpp>
#include <taqdit/pipeline.hpp>
#include <taqdit/reconstruction.hpp>

#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace taqdit {

inline void write_metrics_csv(std::ostream& os, const EvalReport& rep)
{
    set_csv_precision(os);
    os << kMetricsCsvHeader << '\n';
    for (std::size_t b = 0; b < rep.blocks.size(); ++b) {
        const BlockEval& e = rep.blocks[b];
        os << b << ',' << e.output_mse << ',' << e.output_sqnr_db << ',' << e.pf_out_input_scale
           << ',' << e.pf_out_input_mse << ',' << e.online_shift_computations << '\n';
    }
}

inline void write_occupancy_csv(std::ostream& os, const EvalReport& rep)
{
    set_csv_precision(os);
    os << kOccupancyCsvHeader << '\n';
    for (std::size_t b = 0; b < rep.blocks.size(); ++b)
        write_occupancy_row(os, "block" + std::to_string(b), rep.blocks[b].occupancy);
}

inline void write_ranges_csv(std::ostream& os, const EvalReport& rep)
{
    set_csv_precision(os);
    os << kRangeCsvHeader << '\n';
    for (std::size_t b = 0; b < rep.blocks.size(); ++b)
        write_range_rows(os, "block" + std::to_string(b), rep.blocks[b].occupancy.channel_ranges);
}

inline void write_trace_csv(std::ostream& os, const std::vector<ReconTrace>& traces)
{
    set_csv_precision(os);
    os << kTraceCsvHeader << '\n';
    for (const ReconTrace& t : traces)
        for (std::size_t i = 0; i < t.losses.size(); ++i)
            os << i << ',' << t.block_id << ',' << t.losses[i] << '\n';
}

namespace detail {

template <class Fn>
void write_text(const std::string& path, Fn&& fn)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError(FormatError::Kind::Io, "cannot open " + path + " for writing");
    fn(out);
    if (!out)
        throw FormatError(FormatError::Kind::Io, "write failed: " + path);
}

} // namespace detail

/// `<prefix>_metrics.csv`, `<prefix>_occupancy.csv` and `<prefix>_ranges.csv`.
inline void write_eval_reports(const std::string& prefix, const EvalReport& rep)
{
    detail::write_text(prefix + "_metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rep); });
    detail::write_text(prefix + "_occupancy.csv",
                       [&](std::ostream& os) { write_occupancy_csv(os, rep); });
    detail::write_text(prefix + "_ranges.csv", [&](std::ostream& os) { write_ranges_csv(os, rep); });
}

inline void write_trace_report(const std::string& prefix, const std::vector<ReconTrace>& traces)
{
    detail::write_text(prefix + "_trace.csv", [&](std::ostream& os) { write_trace_csv(os, traces); });
}

} // namespace taqdit

#endif // TAQDIT_REPORT_HPP_
