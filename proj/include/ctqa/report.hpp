#pragma once

#include <string>

#include "ctqa/evaluate.hpp"

namespace ctqa {

/// All renderers are pure string builders: byte-deterministic for a given
/// report, no timestamps or generated ids. They only format numbers the
/// report already contains.

/// Monospace text table: Imaging Condition | Detected | Total Nodules |
/// Sensitivity (%), one-decimal percent, plus a footnote naming the worst
/// condition's integer pp delta and relative decrease (omitted for
/// single-condition reports).
std::string render_condition_table(const SensitivityReport& report);

/// CSV mirrors. Headers are part of the contract:
///   sensitivity_by_condition.csv: condition_id,detected,total,sensitivity
///   per_case_matrix.csv:          case_id,condition_id,detected,total,status
///   threshold_sweep.csv:          condition_id,threshold,detected,total,sensitivity
///   deltas.csv:                   condition_id,pp_delta,relative_change_pct
std::string condition_table_csv(const SensitivityReport& report);
std::string per_case_matrix_csv(const SensitivityReport& report);
std::string threshold_sweep_csv(const SensitivityReport& report);
std::string deltas_csv(const SensitivityReport& report);

/// Per-case heatmap, one row per case, one column per condition, cell text
/// "detected/total". Colors: red when the fraction is 0, green at 1,
/// yellow in between; absent cells gray. Aggregate footer per column.
std::string case_matrix_svg(const SensitivityReport& report);

/// Sensitivity-vs-threshold polylines, one per condition, with a legend and
/// a dotted vertical guide at threshold 0.5.
std::string sweep_svg(const SensitivityReport& report);

} // namespace ctqa
