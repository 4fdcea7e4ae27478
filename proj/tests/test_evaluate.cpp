#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ctqa/errors.hpp"
#include "ctqa/evaluate.hpp"

using namespace ctqa;

namespace {

ConsensusNodule nodule(const std::string& case_id, Vec3 pos) {
    ConsensusNodule n;
    n.case_id = case_id;
    n.centroid_world = pos;
    n.reader_count = 4;
    return n;
}

Detection detection(const std::string& case_id, const std::string& cond, Vec3 pos, double conf) {
    Detection d;
    d.case_id = case_id;
    d.condition_id = cond;
    d.position_world = pos;
    d.confidence = conf;
    return d;
}

// Exhaustive all-pairs matcher, no shortcuts: the oracle for match_case.
std::vector<bool> brute_force_detected(const std::vector<ConsensusNodule>& nodules,
                                       const std::vector<Detection>& detections,
                                       const MatchParams& p) {
    std::vector<bool> out;
    for (const auto& n : nodules) {
        bool hit = false;
        for (const auto& d : detections)
            if (d.confidence >= p.confidence_threshold &&
                distance(n.centroid_world, d.position_world) <= p.match_radius_mm)
                hit = true;
        out.push_back(hit);
    }
    return out;
}

// Fixed fixture yielding Table-1-style counts (57,52,53,52,33) of 126: one
// case with 126 nodules spaced far apart, detections aimed at the first k.
std::map<std::string, std::vector<ConsensusNodule>> table1_consensus() {
    std::map<std::string, std::vector<ConsensusNodule>> consensus;
    for (int i = 0; i < 126; ++i)
        consensus["caseT"].push_back(nodule("caseT", {static_cast<double>(100 * i), 0, 0}));
    return consensus;
}

std::vector<Detection> table1_detections() {
    const std::vector<std::pair<std::string, int>> counts = {
        {"baseline", 57}, {"dose_25", 52}, {"dose_50", 53}, {"thick_3mm", 52}, {"thick_5mm", 33}};
    std::vector<Detection> dets;
    for (const auto& [cond, k] : counts)
        for (int i = 0; i < k; ++i)
            dets.push_back(detection("caseT", cond, {static_cast<double>(100 * i), 3.0, 4.0}, 0.9));
    return dets;
}

const std::vector<std::string> kSuiteIds = {"baseline", "dose_25", "dose_50", "thick_3mm",
                                            "thick_5mm"};

} // namespace

TEST_CASE("matching boundaries") {
    const std::vector<ConsensusNodule> nodules = {nodule("c", {0, 0, 0})};
    const MatchParams p{0.5, 15.0};

    SUBCASE("inside the radius") {
        const auto r = match_case(nodules, {detection("c", "x", {0, 0, 14.9}, 0.6)}, p);
        REQUIRE(r.size() == 1);
        CHECK(r[0].detected);
        CHECK(*r[0].best_distance_mm == doctest::Approx(14.9));
        CHECK(*r[0].best_confidence == doctest::Approx(0.6));
    }
    SUBCASE("outside the radius") {
        const auto r = match_case(nodules, {detection("c", "x", {0, 0, 15.1}, 0.6)}, p);
        CHECK_FALSE(r[0].detected);
        CHECK_FALSE(r[0].best_distance_mm.has_value());
    }
    SUBCASE("distance exactly 15 is inclusive (9-12-15 triple)") {
        const auto dets = std::vector<Detection>{detection("c", "x", {9, 12, 0}, 0.5)};
        const auto r = match_case(nodules, dets, p);
        CHECK(r[0].detected);
        CHECK(*r[0].best_distance_mm == doctest::Approx(15.0));
        CHECK(brute_force_detected(nodules, dets, p) == std::vector<bool>{true});
    }
    SUBCASE("confidence threshold is inclusive") {
        const auto r = match_case(nodules, {detection("c", "x", {0, 0, 0}, 0.5)}, p);
        CHECK(r[0].detected);
        const auto r2 = match_case(nodules, {detection("c", "x", {0, 0, 0}, 0.4999)}, p);
        CHECK_FALSE(r2[0].detected);
    }
    SUBCASE("one detection may satisfy several nodules") {
        const std::vector<ConsensusNodule> two = {nodule("c", {0, 0, 0}), nodule("c", {0, 0, 10})};
        const auto r = match_case(two, {detection("c", "x", {0, 0, 5}, 0.9)}, p);
        CHECK(r[0].detected);
        CHECK(r[1].detected);
    }
    SUBCASE("mixed case ids are rejected") {
        CHECK_THROWS_AS(match_case(nodules, {detection("other", "x", {0, 0, 0}, 0.9)}, p),
                        data_error);
        const std::vector<ConsensusNodule> mixed = {nodule("c", {0, 0, 0}), nodule("d", {1, 1, 1})};
        CHECK_THROWS_AS(match_case(mixed, {}, p), data_error);
    }
    SUBCASE("mixed condition ids are rejected") {
        CHECK_THROWS_AS(match_case(nodules,
                                   {detection("c", "a", {0, 0, 0}, 0.9),
                                    detection("c", "b", {0, 0, 0}, 0.9)},
                                   p),
                        data_error);
    }
}

TEST_CASE("match_case equals the brute-force matcher on 500 random instances") {
    std::mt19937 gen(77);
    std::uniform_real_distribution<double> pos(-60.0, 60.0);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    std::uniform_int_distribution<int> n_nod(0, 30), n_det(0, 100);

    for (int trial = 0; trial < 500; ++trial) {
        std::vector<ConsensusNodule> nodules;
        for (int i = 0, n = n_nod(gen); i < n; ++i)
            nodules.push_back(nodule("c", {pos(gen), pos(gen), pos(gen)}));
        std::vector<Detection> dets;
        for (int i = 0, n = n_det(gen); i < n; ++i)
            dets.push_back(detection("c", "x", {pos(gen), pos(gen), pos(gen)}, conf(gen)));

        const MatchParams p{conf(gen), 15.0};
        const auto got = match_case(nodules, dets, p);
        const auto want = brute_force_detected(nodules, dets, p);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].detected == want[i]);

        // Detection order never changes the result.
        auto shuffled = dets;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        const auto again = match_case(nodules, shuffled, p);
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].detected == again[i].detected);
            if (got[i].detected)
                CHECK(*got[i].best_distance_mm == doctest::Approx(*again[i].best_distance_mm));
        }
    }
}

TEST_CASE("sensitivity arithmetic matches the one-decimal rendering") {
    auto results_from = [](int detected, int total) {
        std::vector<MatchResult> rs(static_cast<std::size_t>(total));
        for (int i = 0; i < detected; ++i) rs[static_cast<std::size_t>(i)].detected = true;
        return rs;
    };
    const auto a = sensitivity(results_from(57, 126));
    CHECK(a.detected == 57);
    REQUIRE(a.ratio.has_value());
    CHECK(std::round(*a.ratio * 1000.0) / 10.0 == doctest::Approx(45.2));

    const auto b = sensitivity(results_from(33, 126));
    CHECK(std::round(*b.ratio * 1000.0) / 10.0 == doctest::Approx(26.2));

    const auto empty = sensitivity({});
    CHECK(empty.total == 0);
    CHECK_FALSE(empty.ratio.has_value());
}

TEST_CASE("threshold sweeps are monotone and per-threshold exact") {
    const std::vector<ConsensusNodule> nodules = {nodule("c", {0, 0, 0}), nodule("c", {50, 0, 0})};
    const std::vector<Detection> dets = {detection("c", "x", {0, 0, 1}, 0.3),
                                         detection("c", "x", {50, 0, 1}, 0.8)};
    const auto curve = threshold_sweep(nodules, dets, 15.0, default_sweep_thresholds());
    REQUIRE(curve.size() == 9);
    CHECK(curve[0].detected == 2); // t=0.1
    CHECK(curve[3].detected == 1); // t=0.4 drops the 0.3 detection
    CHECK(curve[8].detected == 0); // t=0.9
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].detected <= curve[i - 1].detected);

    // Threshold zero counts every nodule with any detection in range.
    const auto all = threshold_sweep(nodules, dets, 15.0, {0.0});
    CHECK(all[0].detected == 2);

    CHECK_THROWS_AS(threshold_sweep(nodules, dets, 15.0, {0.5, 0.1}), usage_error);
}

TEST_CASE("sensitivity is monotone in radius") {
    std::mt19937 gen(31);
    std::uniform_real_distribution<double> pos(-40.0, 40.0);
    std::vector<ConsensusNodule> nodules;
    std::vector<Detection> dets;
    for (int i = 0; i < 20; ++i) nodules.push_back(nodule("c", {pos(gen), pos(gen), pos(gen)}));
    for (int i = 0; i < 40; ++i)
        dets.push_back(detection("c", "x", {pos(gen), pos(gen), pos(gen)}, 0.8));

    int prev = -1;
    for (double radius : {5.0, 10.0, 15.0, 25.0, 50.0}) {
        const auto s = sensitivity(match_case(nodules, dets, {0.5, radius}));
        CHECK(s.detected >= prev);
        prev = s.detected;
    }
}

TEST_CASE("cohort report reproduces the fixture table") {
    const auto report = evaluate_cohort(table1_consensus(), table1_detections(), kSuiteIds,
                                        {0.5, 15.0});
    REQUIRE(report.by_condition.size() == 5);
    const int want_detected[] = {57, 52, 53, 52, 33};
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(report.by_condition[i].detected == want_detected[i]);
        CHECK(report.by_condition[i].total == 126);
    }

    // Per-case detected sums equal the condition totals (single case here).
    for (std::size_t ci = 0; ci < 5; ++ci) {
        int sum = 0;
        for (std::size_t ki = 0; ki < report.case_ids.size(); ++ki)
            sum += report.cells[ki][ci] ? report.cells[ki][ci]->detected : 0;
        CHECK(sum == report.by_condition[ci].detected);
    }

    const auto deltas = condition_deltas(report);
    REQUIRE(deltas.size() == 5);
    CHECK(deltas[0].pp_delta == doctest::Approx(0.0));
    CHECK(deltas[1].pp_delta == doctest::Approx(-100.0 * 5.0 / 126.0).epsilon(1e-9)); // ~ -4.0
    CHECK(std::round(deltas[1].pp_delta * 10.0) / 10.0 == doctest::Approx(-4.0));
    CHECK(deltas[4].pp_delta == doctest::Approx(-100.0 * 24.0 / 126.0).epsilon(1e-9)); // ~ -19.0
    CHECK(std::round(deltas[4].pp_delta) == doctest::Approx(-19.0));
    REQUIRE(deltas[4].relative_change.has_value());
    CHECK(std::round(*deltas[4].relative_change * 1000.0) / 10.0 == doctest::Approx(-42.1));
}

TEST_CASE("deltas handle degenerate baselines") {
    SUBCASE("equal conditions give zero deltas") {
        std::map<std::string, std::vector<ConsensusNodule>> consensus;
        consensus["c"].push_back(nodule("c", {0, 0, 0}));
        const std::vector<Detection> dets = {detection("c", "baseline", {0, 0, 0}, 0.9),
                                             detection("c", "dose_25", {0, 0, 0}, 0.9)};
        const auto report = evaluate_cohort(consensus, dets, {"baseline", "dose_25"}, {0.5, 15.0});
        const auto deltas = condition_deltas(report);
        CHECK(deltas[1].pp_delta == doctest::Approx(0.0));
        CHECK(*deltas[1].relative_change == doctest::Approx(0.0));
    }
    SUBCASE("zero baseline sensitivity leaves relative undefined") {
        std::map<std::string, std::vector<ConsensusNodule>> consensus;
        consensus["c"].push_back(nodule("c", {0, 0, 0}));
        const std::vector<Detection> dets = {detection("c", "dose_25", {0, 0, 0}, 0.9)};
        const auto report = evaluate_cohort(consensus, dets, {"baseline", "dose_25"}, {0.5, 15.0});
        const auto deltas = condition_deltas(report);
        CHECK(deltas[0].pp_delta == doctest::Approx(0.0));
        CHECK_FALSE(deltas[0].relative_change.has_value());
        CHECK(deltas[1].pp_delta > 0.0);
        CHECK_FALSE(deltas[1].relative_change.has_value());
    }
    SUBCASE("missing baseline condition is an error") {
        const auto report = evaluate_cohort({}, {}, {"dose_25"}, {0.5, 15.0});
        CHECK_THROWS_AS(condition_deltas(report), data_error);
    }
}

TEST_CASE("per-case matrix distinguishes absent cells from zero detections") {
    std::map<std::string, std::vector<ConsensusNodule>> consensus;
    for (int i = 0; i < 10; ++i) consensus["red16"].push_back(nodule("red16", {100.0 * i, 0, 0}));
    consensus["red09"].push_back(nodule("red09", {0, 0, 0}));
    consensus["red09"].push_back(nodule("red09", {200, 0, 0}));
    consensus["green"].push_back(nodule("green", {0, 0, 0}));
    consensus["empty"] = {};

    std::vector<Detection> dets;
    for (const auto& cond : kSuiteIds) dets.push_back(detection("green", cond, {1, 1, 1}, 0.9));

    Coverage cov;
    for (const auto& cond : kSuiteIds) {
        cov.emplace("red16", cond);
        cov.emplace("red09", cond);
        if (cond != "thick_5mm") cov.emplace("green", cond); // green missing one output
    }

    const auto report =
        evaluate_cohort(consensus, dets, kSuiteIds, {0.5, 15.0}, default_sweep_thresholds(), cov);

    REQUIRE(report.case_ids.size() == 3);
    CHECK(report.zero_nodule_cases == std::vector<std::string>{"empty"});

    const auto idx_of = [&](const std::string& id) {
        return static_cast<std::size_t>(
            std::find(report.case_ids.begin(), report.case_ids.end(), id) -
            report.case_ids.begin());
    };
    // Complete failure rows: zero detected everywhere, but cells present.
    for (std::size_t ci = 0; ci < 5; ++ci) {
        REQUIRE(report.cells[idx_of("red16")][ci].has_value());
        CHECK(report.cells[idx_of("red16")][ci]->detected == 0);
        CHECK(report.cells[idx_of("red16")][ci]->total == 10);
        CHECK(report.cells[idx_of("red09")][ci]->detected == 0);
        CHECK(report.cells[idx_of("red09")][ci]->total == 2);
    }
    // Green case: detected where covered, absent at thick_5mm.
    CHECK(report.cells[idx_of("green")][0]->detected == 1);
    CHECK_FALSE(report.cells[idx_of("green")][4].has_value());

    // The absent cell keeps its nodule out of that condition's denominator.
    CHECK(report.by_condition[0].total == 13);
    CHECK(report.by_condition[4].total == 12);

    // An explicitly empty coverage set means nothing ran: every cell absent.
    const auto none = evaluate_cohort(consensus, dets, kSuiteIds, {0.5, 15.0},
                                      default_sweep_thresholds(), Coverage{});
    for (std::size_t ki = 0; ki < none.case_ids.size(); ++ki)
        for (std::size_t ci = 0; ci < 5; ++ci) CHECK_FALSE(none.cells[ki][ci].has_value());
    CHECK(none.by_condition[0].total == 0);
}
