#include "ctqa/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctqa/errors.hpp"

namespace ctqa {

std::vector<MatchResult> match_case(const std::vector<ConsensusNodule>& nodules,
                                    const std::vector<Detection>& detections,
                                    const MatchParams& p) {
    if (!(p.match_radius_mm > 0.0)) throw usage_error("match radius must be > 0");
    if (!(p.confidence_threshold >= 0.0 && p.confidence_threshold <= 1.0))
        throw usage_error("confidence threshold must be in [0,1]");

    if (!nodules.empty()) {
        const std::string& cid = nodules.front().case_id;
        for (const auto& n : nodules)
            if (n.case_id != cid) throw data_error("match_case: mixed case ids among nodules");
        for (const auto& d : detections)
            if (d.case_id != cid)
                throw data_error("match_case: detection case '" + d.case_id +
                                 "' does not belong to case '" + cid + "'");
    }
    if (!detections.empty()) {
        const std::string& cond = detections.front().condition_id;
        for (const auto& d : detections)
            if (d.condition_id != cond) throw data_error("match_case: mixed condition ids");
    }

    const double r2 = p.match_radius_mm * p.match_radius_mm;
    std::vector<MatchResult> out;
    out.reserve(nodules.size());
    for (const auto& n : nodules) {
        MatchResult m;
        m.nodule = &n;
        double best_sq = std::numeric_limits<double>::infinity();
        for (const auto& d : detections) {
            if (d.confidence < p.confidence_threshold) continue;
            const double sq = squared_distance(n.centroid_world, d.position_world);
            if (sq > r2) continue;
            if (sq < best_sq || (sq == best_sq && m.best_confidence && d.confidence > *m.best_confidence)) {
                best_sq = sq;
                m.best_confidence = d.confidence;
            }
        }
        if (std::isfinite(best_sq)) {
            m.detected = true;
            m.best_distance_mm = std::sqrt(best_sq);
        }
        out.push_back(m);
    }
    return out;
}

SensitivityValue sensitivity(const std::vector<MatchResult>& results) {
    SensitivityValue s;
    s.total = static_cast<int>(results.size());
    for (const auto& r : results) s.detected += r.detected ? 1 : 0;
    if (s.total > 0) s.ratio = static_cast<double>(s.detected) / static_cast<double>(s.total);
    return s;
}

std::vector<SweepPoint> threshold_sweep(const std::vector<ConsensusNodule>& nodules,
                                        const std::vector<Detection>& detections,
                                        double match_radius_mm,
                                        const std::vector<double>& thresholds) {
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] < thresholds[i - 1])
            throw usage_error("sweep thresholds must be sorted ascending");
    std::vector<SweepPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto results = match_case(nodules, detections, {t, match_radius_mm});
        const auto s = sensitivity(results);
        out.push_back({t, s.detected, s.total, s.ratio});
    }
    return out;
}

SensitivityReport evaluate_cohort(const std::map<std::string, std::vector<ConsensusNodule>>& consensus,
                                  const std::vector<Detection>& detections,
                                  const std::vector<std::string>& condition_ids,
                                  const MatchParams& params,
                                  const std::vector<double>& sweep_thresholds,
                                  const std::optional<Coverage>& coverage) {
    SensitivityReport report;
    report.condition_ids = condition_ids;
    report.params = params;
    report.sweep_thresholds = sweep_thresholds;

    for (const auto& [case_id, nodules] : consensus) {
        if (nodules.empty())
            report.zero_nodule_cases.push_back(case_id);
        else
            report.case_ids.push_back(case_id);
    }

    // Group detections once; match_case re-checks the invariants.
    std::map<std::pair<std::string, std::string>, std::vector<Detection>> grouped;
    for (const auto& d : detections) grouped[{d.case_id, d.condition_id}].push_back(d);

    const auto covered = [&](const std::string& case_id, const std::string& cond) {
        return !coverage || coverage->count({case_id, cond}) > 0;
    };

    report.cells.assign(report.case_ids.size(), {});
    report.by_condition.clear();
    for (const auto& cond : condition_ids) report.by_condition.push_back({cond, 0, 0, {}});
    report.sweep.assign(condition_ids.size(), {});
    for (std::size_t ci = 0; ci < condition_ids.size(); ++ci)
        for (double t : sweep_thresholds) report.sweep[ci].push_back({t, 0, 0, {}});

    for (std::size_t ki = 0; ki < report.case_ids.size(); ++ki) {
        const std::string& case_id = report.case_ids[ki];
        const auto& nodules = consensus.at(case_id);
        report.cells[ki].assign(condition_ids.size(), std::nullopt);

        for (std::size_t ci = 0; ci < condition_ids.size(); ++ci) {
            const std::string& cond = condition_ids[ci];
            if (!covered(case_id, cond)) continue; // absent cell, not zero

            static const std::vector<Detection> kNone;
            const auto it = grouped.find({case_id, cond});
            const auto& dets = (it != grouped.end()) ? it->second : kNone;

            const auto s = sensitivity(match_case(nodules, dets, params));
            report.cells[ki][ci] = CaseCell{s.detected, s.total};
            report.by_condition[ci].detected += s.detected;
            report.by_condition[ci].total += s.total;

            const auto curve = threshold_sweep(nodules, dets, params.match_radius_mm, sweep_thresholds);
            for (std::size_t ti = 0; ti < curve.size(); ++ti) {
                report.sweep[ci][ti].detected += curve[ti].detected;
                report.sweep[ci][ti].total += curve[ti].total;
            }
        }
    }

    for (auto& c : report.by_condition)
        if (c.total > 0) c.sensitivity = static_cast<double>(c.detected) / c.total;
    for (auto& curve : report.sweep)
        for (auto& pt : curve)
            if (pt.total > 0) pt.sensitivity = static_cast<double>(pt.detected) / pt.total;

    return report;
}

std::vector<ConditionDelta> condition_deltas(const SensitivityReport& report,
                                             const std::string& baseline_id) {
    const ConditionStats* base = nullptr;
    for (const auto& c : report.by_condition)
        if (c.condition_id == baseline_id) base = &c;
    if (!base) throw data_error("condition_deltas: no baseline condition '" + baseline_id + "'");

    std::vector<ConditionDelta> out;
    for (const auto& c : report.by_condition) {
        ConditionDelta d;
        d.condition_id = c.condition_id;
        if (base->sensitivity && c.sensitivity) {
            const double s_base = *base->sensitivity;
            const double s_c = *c.sensitivity;
            d.pp_delta = 100.0 * (s_c - s_base);
            if (s_base > 0.0) d.relative_change = (s_c - s_base) / s_base;
        }
        out.push_back(std::move(d));
    }
    return out;
}

} // namespace ctqa
