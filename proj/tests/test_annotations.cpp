#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "ctqa/annotations.hpp"
#include "ctqa/errors.hpp"

using namespace ctqa;

namespace {

Geometry lidc_geometry() {
    Geometry g;
    g.origin = {-175.0, -175.0, -100.0};
    g.spacing = {0.7, 0.7, 1.25};
    g.dims = {512, 512, 160};
    return g;
}

std::string roi_xml(double z, const std::vector<std::pair<int, int>>& points,
                    bool inclusion = true) {
    std::ostringstream os;
    os << "<roi><imageZposition>" << z << "</imageZposition>"
       << "<imageSOP_UID>1.2.3</imageSOP_UID>"
       << "<inclusion>" << (inclusion ? "TRUE" : "FALSE") << "</inclusion>";
    for (const auto& [x, y] : points)
        os << "<edgeMap><xCoord>" << x << "</xCoord><yCoord>" << y << "</yCoord></edgeMap>";
    os << "</roi>";
    return os.str();
}

std::string nodule_xml(const std::string& id, const std::vector<std::string>& rois) {
    std::ostringstream os;
    os << "<unblindedReadNodule><noduleID>" << id << "</noduleID>";
    for (const auto& r : rois) os << r;
    os << "</unblindedReadNodule>";
    return os.str();
}

std::string lidc_xml(const std::vector<std::vector<std::string>>& sessions) {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<LidcReadMessage xmlns=\"http://www.nih.gov\">";
    os << "<ResponseHeader><SeriesInstanceUid>1.2.3</SeriesInstanceUid></ResponseHeader>";
    for (const auto& nodules : sessions) {
        os << "<readingSession><annotationVersion>3.12</annotationVersion>";
        for (const auto& n : nodules) os << n;
        os << "</readingSession>";
    }
    os << "</LidcReadMessage>\n";
    return os.str();
}

ReaderAnnotation annotation_at(const std::string& case_id, int reader, const std::string& id,
                               const Vec3& centroid) {
    ReaderAnnotation a;
    a.case_id = case_id;
    a.reader_index = reader;
    a.nodule_id = id;
    a.contour_points = {{0, 0, 0}};
    a.centroid_world = centroid;
    return a;
}

// Independent O(n^2) reference clustering: merge passes until no pair of
// clusters holds annotations within the radius, then threshold readers.
struct RefCluster {
    std::vector<std::size_t> members;
};

std::vector<RefCluster> reference_clusters(const std::vector<ReaderAnnotation>& anns,
                                           double radius) {
    std::vector<RefCluster> clusters;
    for (std::size_t i = 0; i < anns.size(); ++i) clusters.push_back({{i}});
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t a = 0; a < clusters.size() && !changed; ++a)
            for (std::size_t b = a + 1; b < clusters.size() && !changed; ++b) {
                bool link = false;
                for (auto i : clusters[a].members)
                    for (auto j : clusters[b].members)
                        if (distance(anns[i].centroid_world, anns[j].centroid_world) <= radius)
                            link = true;
                if (link) {
                    clusters[a].members.insert(clusters[a].members.end(),
                                               clusters[b].members.begin(),
                                               clusters[b].members.end());
                    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(b));
                    changed = true;
                }
            }
    }
    return clusters;
}

std::vector<ConsensusNodule> reference_consensus(const std::vector<ReaderAnnotation>& anns,
                                                 int min_readers, double radius) {
    std::vector<ConsensusNodule> out;
    for (const auto& cluster : reference_clusters(anns, radius)) {
        std::set<int> readers;
        Vec3 sum;
        for (auto i : cluster.members) {
            readers.insert(anns[i].reader_index);
            sum = sum + anns[i].centroid_world;
        }
        if (static_cast<int>(readers.size()) < min_readers) continue;
        ConsensusNodule n;
        n.case_id = anns.front().case_id;
        n.reader_count = static_cast<int>(readers.size());
        const double m = static_cast<double>(cluster.members.size());
        n.centroid_world = {sum.x / m, sum.y / m, sum.z / m};
        out.push_back(n);
    }
    std::sort(out.begin(), out.end(), [](const ConsensusNodule& a, const ConsensusNodule& b) {
        return std::make_tuple(a.centroid_world.z, a.centroid_world.y, a.centroid_world.x) <
               std::make_tuple(b.centroid_world.z, b.centroid_world.y, b.centroid_world.x);
    });
    return out;
}

void check_same_consensus(const std::vector<ConsensusNodule>& got,
                          const std::vector<ConsensusNodule>& want) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].reader_count == want[i].reader_count);
        CHECK(distance(got[i].centroid_world, want[i].centroid_world) < 1e-9);
    }
}

} // namespace

TEST_CASE("four sessions with one contoured nodule each") {
    std::vector<std::vector<std::string>> sessions;
    for (int r = 0; r < 4; ++r)
        sessions.push_back({nodule_xml("N" + std::to_string(r),
                                       {roi_xml(-62.5, {{40, 50}, {44, 50}, {44, 54}, {40, 54}})})});
    const auto result = parse_lidc_xml(lidc_xml(sessions), "case1");
    CHECK(result.reading_sessions == 4);
    CHECK(result.annotations.size() == 4);
    CHECK(result.skipped_marks_only == 0);
    for (int r = 0; r < 4; ++r) {
        CHECK(result.annotations[static_cast<std::size_t>(r)].reader_index == r);
        CHECK(result.annotations[static_cast<std::size_t>(r)].contour_points.size() == 4);
    }
}

TEST_CASE("point marks are skipped and counted") {
    const auto xml = lidc_xml({{nodule_xml("mark", {roi_xml(-50.0, {{100, 100}})})}});
    const auto result = parse_lidc_xml(xml, "case1");
    CHECK(result.annotations.empty());
    CHECK(result.skipped_marks_only == 1);
    CHECK(result.reading_sessions == 1);
}

TEST_CASE("exclusion rois contribute no points") {
    const auto xml = lidc_xml({{nodule_xml(
        "N1", {roi_xml(-62.5, {{40, 50}, {44, 50}, {44, 54}, {40, 54}}),
               roi_xml(-61.25, {{41, 51}, {43, 53}}, /*inclusion=*/false)})}});
    const auto result = parse_lidc_xml(xml, "case1");
    REQUIRE(result.annotations.size() == 1);
    CHECK(result.annotations[0].contour_points.size() == 4);
}

TEST_CASE("malformed XML raises a data error") {
    CHECK_THROWS_AS(parse_lidc_xml("<LidcReadMessage><readingSession>", "case1"), data_error);
}

TEST_CASE("ten-point square contour centroid") {
    // Symmetric 10-vertex outline centered on voxel (50, 60), slice z=-62.5.
    const std::vector<std::pair<int, int>> square = {{45, 55}, {50, 55}, {55, 55}, {55, 60},
                                                     {55, 65}, {50, 65}, {45, 65}, {45, 60},
                                                     {50, 55}, {50, 65}};
    const auto xml = lidc_xml({{nodule_xml("N1", {roi_xml(-62.5, square)})}});
    auto result = parse_lidc_xml(xml, "case1");
    REQUIRE(result.annotations.size() == 1);

    const auto g = lidc_geometry();
    const Vec3 c = annotation_centroid(result.annotations[0], g);
    const Vec3 want = voxel_to_world(g, {50, 60, (-62.5 - g.origin.z) / g.spacing.z});
    CHECK(distance(c, want) < 1e-9);
}

TEST_CASE("centroid basics") {
    const auto g = lidc_geometry();
    ReaderAnnotation a;
    a.case_id = "case1";
    a.nodule_id = "N";

    SUBCASE("single point") {
        a.contour_points = {{50, 60, -62.5}};
        const Vec3 c = annotation_centroid(a, g);
        CHECK(distance(c, voxel_to_world(g, {50, 60, 30})) < 1e-12);
    }
    SUBCASE("symmetric square sits at its center") {
        a.contour_points = {{10, 10, -100}, {20, 10, -100}, {20, 20, -100}, {10, 20, -100}};
        const Vec3 c = annotation_centroid(a, g);
        CHECK(distance(c, voxel_to_world(g, {15, 15, 0})) < 1e-12);
    }
    SUBCASE("irregular polygon equals the brute-force mean") {
        const std::vector<std::pair<double, double>> pts = {{3, 7},  {11, 2}, {19, 9}, {14, 17},
                                                            {6, 21}, {1, 13}, {9, 11}};
        for (const auto& [x, y] : pts) a.contour_points.push_back({x, y, -97.5});
        Vec3 expect;
        for (const auto& [x, y] : pts) {
            const Vec3 w = voxel_to_world(g, {x, y, 2});
            expect = expect + w;
        }
        expect = expect * (1.0 / static_cast<double>(pts.size()));
        CHECK(distance(annotation_centroid(a, g), expect) < 1e-9);
    }
    SUBCASE("z outside the volume grid is unmappable") {
        a.contour_points = {{50, 60, g.origin.z - 1.0}};
        CHECK_THROWS_WITH_AS(annotation_centroid(a, g), doctest::Contains("z-grid"), data_error);
        a.contour_points = {{50, 60, g.origin.z + 160 * 1.25}};
        CHECK_THROWS_AS(annotation_centroid(a, g), data_error);
    }
    SUBCASE("empty contour is an error") {
        CHECK_THROWS_AS(annotation_centroid(a, g), data_error);
    }
    SUBCASE("derive_world_fields fills diameter") {
        a.contour_points = {{0, 0, -100}, {10, 0, -100}};
        derive_world_fields(a, g);
        CHECK(a.approx_diameter_mm == doctest::Approx(7.0)); // 10 voxels * 0.7 mm
    }
}

TEST_CASE("consensus merging") {
    SUBCASE("four identical centroids merge to one nodule") {
        std::vector<ReaderAnnotation> anns;
        for (int r = 0; r < 4; ++r)
            anns.push_back(annotation_at("case1", r, "N" + std::to_string(r), {10, 10, 10}));
        const auto out = build_consensus(anns, 3, 5.0);
        REQUIRE(out.size() == 1);
        CHECK(out[0].reader_count == 4);
        CHECK(distance(out[0].centroid_world, {10, 10, 10}) < 1e-12);
    }
    SUBCASE("two readers fall under a three-reader minimum") {
        std::vector<ReaderAnnotation> anns = {annotation_at("case1", 0, "A", {0, 0, 0}),
                                              annotation_at("case1", 1, "B", {1, 0, 0})};
        CHECK(build_consensus(anns, 3, 5.0).empty());
    }
    SUBCASE("two well-separated triplets stay distinct") {
        std::vector<ReaderAnnotation> anns;
        for (int r : {0, 1, 2}) anns.push_back(annotation_at("case1", r, "A", {0, 0, 0}));
        for (int r : {1, 2, 3}) anns.push_back(annotation_at("case1", r, "B", {40, 0, 0}));
        const auto out = build_consensus(anns, 3, 5.0);
        REQUIRE(out.size() == 2);
        CHECK(out[0].reader_count == 3);
        CHECK(out[1].reader_count == 3);
        check_same_consensus(out, reference_consensus(anns, 3, 5.0));
    }
    SUBCASE("duplicate annotations by one reader count once") {
        std::vector<ReaderAnnotation> anns = {
            annotation_at("case1", 0, "A", {0, 0, 0}), annotation_at("case1", 0, "A2", {2, 0, 0}),
            annotation_at("case1", 1, "B", {0, 1, 0}), annotation_at("case1", 2, "C", {0, 0, 1})};
        const auto out = build_consensus(anns, 3, 5.0);
        REQUIRE(out.size() == 1);
        CHECK(out[0].reader_count == 3);      // readers {0,1,2}
        CHECK(out[0].member_ids.size() == 4); // all four annotations contribute
        // Centroid averages all member annotations, duplicates included.
        CHECK(distance(out[0].centroid_world, {0.5, 0.25, 0.25}) < 1e-12);
    }
    SUBCASE("mixed case ids are rejected") {
        std::vector<ReaderAnnotation> anns = {annotation_at("case1", 0, "A", {0, 0, 0}),
                                              annotation_at("case2", 1, "B", {0, 0, 0})};
        CHECK_THROWS_AS(build_consensus(anns, 1, 5.0), data_error);
    }
    SUBCASE("output sorted by centroid (z, y, x)") {
        std::vector<ReaderAnnotation> anns;
        int id = 0;
        for (const Vec3& c : {Vec3{0, 0, 50}, Vec3{0, 50, 0}, Vec3{50, 0, 0}})
            for (int r : {0, 1, 2})
                anns.push_back(annotation_at("case1", r, std::to_string(id++), c));
        const auto out = build_consensus(anns, 3, 5.0);
        REQUIRE(out.size() == 3);
        CHECK(out[0].centroid_world.z == 0.0);
        CHECK(out[0].centroid_world.y == 0.0);
        CHECK(out[1].centroid_world.y == 50.0);
        CHECK(out[2].centroid_world.z == 50.0);
    }
}

TEST_CASE("consensus equals the O(n^2) reference on random fixtures") {
    std::mt19937 gen(2024);
    std::uniform_real_distribution<double> pos(0.0, 60.0);
    std::uniform_int_distribution<int> reader(0, 3);
    std::uniform_int_distribution<int> count(1, 50);

    for (int trial = 0; trial < 50; ++trial) {
        const int n = count(gen);
        std::vector<ReaderAnnotation> anns;
        for (int i = 0; i < n; ++i)
            anns.push_back(annotation_at("case1", reader(gen), std::to_string(i),
                                         {pos(gen), pos(gen), pos(gen)}));
        const auto got = build_consensus(anns, 3, 5.0);
        const auto want = reference_consensus(anns, 3, 5.0);
        check_same_consensus(got, want);

        // Permutation invariance: shuffled input, same consensus set.
        auto shuffled = anns;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        check_same_consensus(build_consensus(shuffled, 3, 5.0), want);

        for (const auto& cn : got) CHECK(cn.reader_count >= 3);
    }
}

TEST_CASE("consensus CSV round trip") {
    std::vector<ReaderAnnotation> anns;
    for (int r = 0; r < 4; ++r) anns.push_back(annotation_at("case7", r, "N", {-140.0, -133.0, -62.5}));
    const auto nodules = build_consensus(anns, 3, 5.0);

    std::ostringstream os;
    write_consensus_csv(nodules, os);
    const std::string csv = os.str();
    CHECK(csv == "case_id,nodule_index,x_mm,y_mm,z_mm,reader_count\n"
                 "case7,0,-140,-133,-62.5,4\n");

    std::istringstream is(csv);
    const auto back = read_consensus_csv(is);
    REQUIRE(back.size() == 1);
    CHECK(back[0].case_id == "case7");
    CHECK(back[0].reader_count == 4);
    CHECK(distance(back[0].centroid_world, nodules[0].centroid_world) < 1e-9);
}

TEST_CASE("consensus CSV rejects bad input") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_consensus_csv(empty), data_error);
    std::istringstream bad_header("a,b,c\n");
    CHECK_THROWS_AS(read_consensus_csv(bad_header), data_error);
    std::istringstream bad_row("case_id,nodule_index,x_mm,y_mm,z_mm,reader_count\nc,0,x,0,0,4\n");
    CHECK_THROWS_AS(read_consensus_csv(bad_row), data_error);
}
