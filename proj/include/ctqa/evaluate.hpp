#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ctqa/annotations.hpp"
#include "ctqa/detections.hpp"

namespace ctqa {

struct MatchParams {
    double confidence_threshold = 0.5;
    double match_radius_mm = 15.0;
};

struct MatchResult {
    const ConsensusNodule* nodule = nullptr;
    bool detected = false;
    std::optional<double> best_distance_mm;
    std::optional<double> best_confidence;
};

/// Match one case-condition slice of detections against that case's
/// consensus nodules. A nodule is detected iff some detection with
/// confidence >= threshold lies within match_radius_mm (both boundaries
/// inclusive); one detection may satisfy several nodules. Throws data_error
/// on mixed case or condition ids.
std::vector<MatchResult> match_case(const std::vector<ConsensusNodule>& nodules,
                                    const std::vector<Detection>& detections,
                                    const MatchParams& p);

struct SensitivityValue {
    int detected = 0;
    int total = 0;
    // Empty when total is 0; downstream code never does NaN arithmetic.
    std::optional<double> ratio;
};

SensitivityValue sensitivity(const std::vector<MatchResult>& results);

struct CaseCell {
    int detected = 0;
    int total = 0;
};

struct ConditionStats {
    std::string condition_id;
    int detected = 0;
    int total = 0;
    std::optional<double> sensitivity;
};

struct SweepPoint {
    double threshold = 0.0;
    int detected = 0;
    int total = 0;
    std::optional<double> sensitivity;
};

struct ConditionDelta {
    std::string condition_id;
    double pp_delta = 0.0;                  // 100 * (s_c - s_base)
    std::optional<double> relative_change;  // (s_c - s_base) / s_base
};

/// Per-condition, per-case and per-threshold detection statistics for one
/// cohort. Cases with zero consensus nodules are excluded from
/// denominators and listed separately. A missing (case, condition) model
/// output is an absent cell, never a zero.
struct SensitivityReport {
    std::vector<std::string> condition_ids;
    std::vector<std::string> case_ids;
    std::vector<std::string> zero_nodule_cases;

    MatchParams params;

    std::vector<ConditionStats> by_condition;                      // aligned with condition_ids
    std::vector<std::vector<std::optional<CaseCell>>> cells;       // [case][condition]
    std::vector<double> sweep_thresholds;
    std::vector<std::vector<SweepPoint>> sweep;                    // [condition][threshold]
};

inline std::vector<double> default_sweep_thresholds() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

/// Pairs of (case_id, condition_id) the model actually produced output for.
/// Without coverage information every pair is presumed covered (zero rows
/// == zero findings); with it, uncovered cells are absent.
using Coverage = std::set<std::pair<std::string, std::string>>;

SensitivityReport evaluate_cohort(const std::map<std::string, std::vector<ConsensusNodule>>& consensus,
                                  const std::vector<Detection>& detections,
                                  const std::vector<std::string>& condition_ids,
                                  const MatchParams& params,
                                  const std::vector<double>& sweep_thresholds = default_sweep_thresholds(),
                                  const std::optional<Coverage>& coverage = std::nullopt);

/// Percentage-point and relative change of every condition against the
/// baseline condition (id "baseline" by default). Throws data_error when
/// the baseline is missing; relative change is undefined when baseline
/// sensitivity is zero or undefined.
std::vector<ConditionDelta> condition_deltas(const SensitivityReport& report,
                                             const std::string& baseline_id = "baseline");

/// One curve per condition, one point per threshold (ascending). Used by
/// evaluate_cohort; exposed for direct sweeps over ad-hoc inputs.
std::vector<SweepPoint> threshold_sweep(const std::vector<ConsensusNodule>& nodules,
                                        const std::vector<Detection>& detections,
                                        double match_radius_mm,
                                        const std::vector<double>& thresholds);

} // namespace ctqa
