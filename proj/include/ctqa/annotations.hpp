#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ctqa/geometry.hpp"

namespace ctqa {

inline constexpr int kDefaultMinReaders = 3;
inline constexpr double kDefaultMergeRadiusMm = 5.0;

/// One contour vertex as it appears in LIDC XML: pixel x/y on a slice
/// identified by its world z position.
struct ContourPoint {
    double x_voxel = 0.0;
    double y_voxel = 0.0;
    double z_world_mm = 0.0;
};

/// A single reader's outline of one nodule. centroid_world and
/// approx_diameter_mm are derived (derive_world_fields) once the volume
/// geometry is known.
struct ReaderAnnotation {
    std::string case_id;
    int reader_index = 0;
    std::string nodule_id;
    std::vector<ContourPoint> contour_points;

    Vec3 centroid_world{std::nan(""), std::nan(""), std::nan("")};
    double approx_diameter_mm = 0.0;
};

struct ConsensusNodule {
    std::string case_id;
    Vec3 centroid_world;
    int reader_count = 0;
    std::vector<std::pair<int, std::string>> member_ids; // (reader_index, nodule_id)
};

struct LidcParseResult {
    std::vector<ReaderAnnotation> annotations;
    int reading_sessions = 0;
    int skipped_marks_only = 0; // nodules with no contour ROI (point marks)
};

/// Parse one case's LIDC-style XML. Reading sessions are numbered in
/// document order; nodules whose ROIs carry no contour (single-point marks)
/// are skipped and counted. Throws data_error on malformed XML.
LidcParseResult parse_lidc_xml(const std::string& xml_text, const std::string& case_id);

/// Unweighted mean of all contour vertices converted to world coordinates.
/// Each vertex z is snapped to the nearest slice plane; a z further than
/// spacing.z/2 from every plane is an error.
Vec3 annotation_centroid(const ReaderAnnotation& a, const Geometry& g);

/// Fill centroid_world and approx_diameter_mm (max pairwise vertex extent).
void derive_world_fields(ReaderAnnotation& a, const Geometry& g);

/// Single-linkage clustering at merge_radius_mm, then drop clusters with
/// fewer than min_readers distinct readers. A reader annotating the same
/// nodule twice counts once toward reader_count but both outlines
/// contribute to the centroid mean. Output is sorted by centroid (z,y,x).
std::vector<ConsensusNodule> build_consensus(const std::vector<ReaderAnnotation>& annotations,
                                             int min_readers = kDefaultMinReaders,
                                             double merge_radius_mm = kDefaultMergeRadiusMm);

/// Consensus CSV: header `case_id,nodule_index,x_mm,y_mm,z_mm,reader_count`,
/// UTF-8, LF line endings, 6 significant digits for coordinates.
void write_consensus_csv(const std::vector<ConsensusNodule>& nodules, std::ostream& out);
std::vector<ConsensusNodule> read_consensus_csv(std::istream& in);

} // namespace ctqa
