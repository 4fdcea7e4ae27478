#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ctqa/geometry.hpp"

namespace ctqa {

enum class CoordFrame { World, Voxel };

/// One candidate finding from the external model, normalized to world mm.
struct Detection {
    std::string case_id;
    std::string condition_id;
    Vec3 position_world;
    double confidence = 0.0;
    CoordFrame source_frame = CoordFrame::World;
};

/// Resolve a case id to its volume geometry, or nullptr when unknown.
using GeometryLookup = std::function<const Geometry*(const std::string&)>;

/// Parse the model-output contract: CSV with header
/// `case_id,condition_id,frame,x,y,z,confidence` (frame in {world,voxel}),
/// or a JSON-lines mirror with the same field names (files ending .jsonl /
/// .ndjson, or whose first byte is '{'). Voxel-frame rows are converted to
/// world; rows are sorted by (case_id, condition_id, confidence desc) with
/// position as the tie-break; duplicates are preserved. Any bad row (unknown
/// case, confidence outside [0,1], non-finite coordinate, missing column)
/// is fatal with its row number.
std::vector<Detection> parse_detections(const std::filesystem::path& path,
                                        const GeometryLookup& geometry);

std::vector<Detection> parse_detections_csv(std::istream& in, const GeometryLookup& geometry);
std::vector<Detection> parse_detections_jsonl(std::istream& in, const GeometryLookup& geometry);

/// CSV serialization of the same schema; world frame, 6 significant digits.
void write_detections_csv(const std::vector<Detection>& detections, std::ostream& out);

/// Total deterministic order used by the parser.
void sort_detections(std::vector<Detection>& detections);

/// Out-of-volume detections are legal (they can still match a nodule near a
/// boundary) but get counted here. Cases with no resolvable geometry are
/// tallied separately rather than guessed at.
struct DetectionDiagnostics {
    std::int64_t total = 0;
    std::int64_t out_of_volume = 0;
    std::int64_t without_geometry = 0;
};

DetectionDiagnostics detection_diagnostics(const std::vector<Detection>& detections,
                                           const GeometryLookup& geometry);

struct ModelRunResult {
    int exit_code = -1;
    bool timed_out = false;
    double duration_s = 0.0;
    std::string command; // after placeholder substitution
};

/// Run one external-model batch: substitute {input_dir} and {output} in the
/// command template and execute it under /bin/sh with a timeout, capturing
/// stdout/stderr to the given log paths. Throws usage_error when a
/// placeholder is missing; returns the exit status either way (the caller
/// decides whether a nonzero exit aborts the condition).
ModelRunResult run_external_model(const std::string& command_template,
                                  const std::filesystem::path& input_dir,
                                  const std::filesystem::path& output_path, int timeout_s,
                                  const std::filesystem::path& stdout_log,
                                  const std::filesystem::path& stderr_log);

} // namespace ctqa
