#include "ctqa/annotations.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "ctqa/csv.hpp"
#include "ctqa/errors.hpp"

namespace ctqa {

namespace {

using boost::property_tree::ptree;

// LIDC files declare a default namespace, so tags normally arrive without a
// prefix; strip one anyway in case a producer used prefixed names.
std::string local_name(const std::string& tag) {
    const auto pos = tag.rfind(':');
    return pos == std::string::npos ? tag : tag.substr(pos + 1);
}

bool parse_bool_text(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s == "true" || s == "1" || s == "yes";
}

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct RoiData {
    double z_world = 0.0;
    bool inclusion = true;
    std::vector<std::pair<double, double>> edge_points; // (x, y) voxel
};

RoiData parse_roi(const ptree& roi, const std::string& case_id) {
    RoiData out;
    bool have_z = false;
    for (const auto& [tag, node] : roi) {
        const std::string name = local_name(tag);
        if (name == "imageZposition") {
            out.z_world = parse_double_field(trimmed(node.data()), case_id + ": imageZposition");
            have_z = true;
        } else if (name == "inclusion") {
            out.inclusion = parse_bool_text(trimmed(node.data()));
        } else if (name == "edgeMap") {
            double x = 0.0, y = 0.0;
            bool have_x = false, have_y = false;
            for (const auto& [etag, enode] : node) {
                const std::string en = local_name(etag);
                if (en == "xCoord") {
                    x = parse_double_field(trimmed(enode.data()), case_id + ": xCoord");
                    have_x = true;
                } else if (en == "yCoord") {
                    y = parse_double_field(trimmed(enode.data()), case_id + ": yCoord");
                    have_y = true;
                }
            }
            if (!have_x || !have_y) throw data_error(case_id + ": edgeMap without xCoord/yCoord");
            out.edge_points.emplace_back(x, y);
        }
    }
    if (!out.edge_points.empty() && !have_z)
        throw data_error(case_id + ": roi with edgeMap but no imageZposition");
    return out;
}

} // namespace

LidcParseResult parse_lidc_xml(const std::string& xml_text, const std::string& case_id) {
    ptree doc;
    try {
        std::istringstream in(xml_text);
        boost::property_tree::read_xml(in, doc);
    } catch (const boost::property_tree::xml_parser_error& e) {
        throw data_error(case_id + ": malformed XML: " + e.message());
    }

    // Root element is the first non-attribute child (LidcReadMessage).
    const ptree* root = nullptr;
    for (const auto& [tag, node] : doc) {
        if (tag != "<xmlattr>" && tag != "<xmlcomment>") {
            root = &node;
            break;
        }
    }
    if (!root) throw data_error(case_id + ": empty XML document");

    LidcParseResult result;
    for (const auto& [tag, session] : *root) {
        if (local_name(tag) != "readingSession") continue;
        const int reader_index = result.reading_sessions++;
        for (const auto& [ntag, nodule] : session) {
            if (local_name(ntag) != "unblindedReadNodule") continue;

            std::string nodule_id;
            std::vector<RoiData> rois;
            for (const auto& [ftag, fnode] : nodule) {
                const std::string fname = local_name(ftag);
                if (fname == "noduleID")
                    nodule_id = trimmed(fnode.data());
                else if (fname == "roi")
                    rois.push_back(parse_roi(fnode, case_id));
            }

            // A contour ROI outlines the lesion with at least two vertices;
            // single-point marks (sub-3 mm style) carry no contour.
            bool has_contour = false;
            for (const auto& r : rois)
                if (r.inclusion && r.edge_points.size() >= 2) has_contour = true;
            if (!has_contour) {
                ++result.skipped_marks_only;
                continue;
            }

            ReaderAnnotation a;
            a.case_id = case_id;
            a.reader_index = reader_index;
            a.nodule_id = nodule_id;
            for (const auto& r : rois) {
                if (!r.inclusion) continue;
                for (const auto& [x, y] : r.edge_points)
                    a.contour_points.push_back({x, y, r.z_world});
            }
            result.annotations.push_back(std::move(a));
        }
    }
    return result;
}

namespace {

// Snap a world z to the nearest plane of the volume's finite z-grid. A z
// further than half the slice pitch from every grid plane (i.e. outside
// the volume) is unmappable.
double snap_to_slice_plane(double z_world, const Geometry& g, const ReaderAnnotation& a) {
    double k = std::round((z_world - g.origin.z) / g.spacing.z);
    if (g.dims.z >= 1) k = std::clamp(k, 0.0, static_cast<double>(g.dims.z - 1));
    const double plane_z = g.origin.z + k * g.spacing.z;
    if (std::fabs(z_world - plane_z) > g.spacing.z / 2.0 + 1e-9)
        throw data_error(a.case_id + "/" + a.nodule_id + ": contour z " + fmt_sig(z_world) +
                         " mm does not map to the volume's z-grid");
    return k;
}

} // namespace

Vec3 annotation_centroid(const ReaderAnnotation& a, const Geometry& g) {
    if (a.contour_points.empty())
        throw data_error(a.case_id + "/" + a.nodule_id + ": annotation has no contour points");
    Vec3 sum;
    for (const auto& p : a.contour_points) {
        const double k = snap_to_slice_plane(p.z_world_mm, g, a);
        const Vec3 w = voxel_to_world(g, {p.x_voxel, p.y_voxel, k});
        sum = sum + w;
    }
    const double n = static_cast<double>(a.contour_points.size());
    return {sum.x / n, sum.y / n, sum.z / n};
}

void derive_world_fields(ReaderAnnotation& a, const Geometry& g) {
    a.centroid_world = annotation_centroid(a, g);
    double max_sq = 0.0;
    std::vector<Vec3> world;
    world.reserve(a.contour_points.size());
    for (const auto& p : a.contour_points) {
        const double k = snap_to_slice_plane(p.z_world_mm, g, a);
        world.push_back(voxel_to_world(g, {p.x_voxel, p.y_voxel, k}));
    }
    for (std::size_t i = 0; i < world.size(); ++i)
        for (std::size_t j = i + 1; j < world.size(); ++j)
            max_sq = std::max(max_sq, squared_distance(world[i], world[j]));
    a.approx_diameter_mm = std::sqrt(max_sq);
}

std::vector<ConsensusNodule> build_consensus(const std::vector<ReaderAnnotation>& annotations,
                                             int min_readers, double merge_radius_mm) {
    if (annotations.empty()) return {};
    const std::string& case_id = annotations.front().case_id;
    for (const auto& a : annotations) {
        if (a.case_id != case_id)
            throw data_error("build_consensus: mixed case ids ('" + case_id + "' vs '" + a.case_id + "')");
        if (!a.centroid_world.finite())
            throw data_error(case_id + "/" + a.nodule_id + ": centroid not derived or non-finite");
    }

    // Single-linkage union-find over centroid distances.
    const std::size_t n = annotations.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    };
    const double r2 = merge_radius_mm * merge_radius_mm;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (squared_distance(annotations[i].centroid_world, annotations[j].centroid_world) <= r2)
                parent[find(i)] = find(j);

    std::map<std::size_t, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) clusters[find(i)].push_back(i);

    std::vector<ConsensusNodule> out;
    for (auto& [root, members] : clusters) {
        std::set<int> readers;
        for (auto i : members) readers.insert(annotations[i].reader_index);
        if (static_cast<int>(readers.size()) < min_readers) continue;

        ConsensusNodule cn;
        cn.case_id = case_id;
        cn.reader_count = static_cast<int>(readers.size());
        Vec3 sum;
        // Sort members by (reader, nodule id) so output never depends on
        // input order; the centroid mean is order-independent only up to
        // float rounding.
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            const auto& aa = annotations[a];
            const auto& bb = annotations[b];
            return std::tie(aa.reader_index, aa.nodule_id) < std::tie(bb.reader_index, bb.nodule_id);
        });
        for (auto i : members) {
            sum = sum + annotations[i].centroid_world;
            cn.member_ids.emplace_back(annotations[i].reader_index, annotations[i].nodule_id);
        }
        const double m = static_cast<double>(members.size());
        cn.centroid_world = {sum.x / m, sum.y / m, sum.z / m};
        out.push_back(std::move(cn));
    }

    std::sort(out.begin(), out.end(), [](const ConsensusNodule& a, const ConsensusNodule& b) {
        const auto ka = std::make_tuple(a.centroid_world.z, a.centroid_world.y, a.centroid_world.x);
        const auto kb = std::make_tuple(b.centroid_world.z, b.centroid_world.y, b.centroid_world.x);
        return ka < kb;
    });
    return out;
}

void write_consensus_csv(const std::vector<ConsensusNodule>& nodules, std::ostream& out) {
    out << "case_id,nodule_index,x_mm,y_mm,z_mm,reader_count\n";
    std::map<std::string, int> index_in_case;
    for (const auto& n : nodules) {
        const int idx = index_in_case[n.case_id]++;
        out << n.case_id << ',' << idx << ',' << fmt_sig(n.centroid_world.x) << ','
            << fmt_sig(n.centroid_world.y) << ',' << fmt_sig(n.centroid_world.z) << ','
            << n.reader_count << '\n';
    }
}

std::vector<ConsensusNodule> read_consensus_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("consensus CSV: empty file");
    const auto header = split_csv_row(line);
    const std::vector<std::string> expected = {"case_id", "nodule_index", "x_mm",
                                               "y_mm",    "z_mm",         "reader_count"};
    if (header != expected) throw data_error("consensus CSV: unexpected header '" + line + "'");

    std::vector<ConsensusNodule> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv_row(line);
        const std::string ctx = "consensus CSV row " + std::to_string(row);
        if (f.size() != 6) throw data_error(ctx + ": expected 6 fields, got " + std::to_string(f.size()));
        ConsensusNodule n;
        n.case_id = f[0];
        n.centroid_world = {parse_double_field(f[2], ctx), parse_double_field(f[3], ctx),
                            parse_double_field(f[4], ctx)};
        n.reader_count = static_cast<int>(parse_int_field(f[5], ctx));
        if (!n.centroid_world.finite()) throw data_error(ctx + ": non-finite centroid");
        out.push_back(std::move(n));
    }
    return out;
}

} // namespace ctqa
