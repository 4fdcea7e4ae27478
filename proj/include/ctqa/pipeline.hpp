#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctqa/degrade.hpp"
#include "ctqa/evaluate.hpp"

namespace ctqa {

inline constexpr const char* kToolVersion = "ctqa 0.1.0";
inline constexpr const char* kOutputRootEnvVar = "CTQA_OUT_ROOT";
inline constexpr int kConfigSchemaVersion = 1;

/// Everything a run needs, loadable from a JSON config file
/// (schema_version 1); CLI flags override config values.
struct RunConfig {
    std::vector<std::filesystem::path> inputs; // volume files or directories
    std::filesystem::path output_root;         // default: $CTQA_OUT_ROOT or ./out

    std::vector<Condition> conditions; // default: condition_suite()
    double sigma_base_hu = 25.0;
    NoiseLaw noise_law = NoiseLaw::InverseSqrt;
    std::uint64_t seed = 20250116ull;
    std::int64_t min_slices = kDefaultMinSlices;

    int min_readers = kDefaultMinReaders;
    double merge_radius_mm = kDefaultMergeRadiusMm;

    double confidence_threshold = 0.5;
    double match_radius_mm = 15.0;
    std::vector<double> sweep_thresholds = default_sweep_thresholds();

    std::string model_command; // template with {input_dir} and {output}
    int model_timeout_s = 3600;

    int jobs = 1;
    bool dry_run = false;

    // consensus inputs
    std::filesystem::path xml_dir;
    std::filesystem::path geometry_csv; // case_id,origin_*,spacing_*,dim_* per case
    std::filesystem::path volumes_dir;  // alternative geometry source

    // evaluate inputs
    std::filesystem::path consensus_csv;
    std::filesystem::path detections_path;
    std::filesystem::path coverage_manifest; // optional degrade manifest for absent cells

    // phantom generation
    std::filesystem::path phantom_spec; // single spec file
    int phantom_count = 0;              // default mixed suite when > 0
};

RunConfig load_config(const std::filesystem::path& path);

struct DegradeOutcome {
    std::filesystem::path manifest_path;
    int volumes_written = 0;
    std::vector<std::string> excluded_cases;
    std::vector<std::pair<std::string, std::string>> covered; // (case, condition)
    std::map<std::string, Geometry> case_geometry;
};

/// inputs -> out/<condition_id>/<case_id>.nii.gz plus manifest.json.
/// Volumes failing validate_volume are excluded and named in the manifest.
DegradeOutcome run_degrade(const RunConfig& cfg);

struct ConsensusOutcome {
    std::filesystem::path csv_path;
    int cases = 0;
    int nodules = 0;
    int skipped_marks_only = 0;
};

ConsensusOutcome run_consensus(const RunConfig& cfg);

struct EvaluateOutcome {
    SensitivityReport report;
    std::filesystem::path out_dir;
};

/// consensus CSV + detections -> report CSVs, SVGs and the text table.
EvaluateOutcome run_evaluate(const RunConfig& cfg);

/// Threshold sweep only (threshold_sweep.csv + sweep.svg).
EvaluateOutcome run_sweep(const RunConfig& cfg);

struct PhantomOutcome {
    std::filesystem::path cases_dir;
    std::filesystem::path truth_csv;
    int phantoms = 0;
};

PhantomOutcome run_phantom(const RunConfig& cfg);

struct RunOutcome {
    EvaluateOutcome eval;
    // Conditions whose model batch failed; their cells are absent in the
    // report and the process exits 3 when any are present.
    std::vector<std::string> failed_conditions;
};

/// Full pipeline: (optional) phantom generation, degrade, one external
/// model invocation per condition, evaluate. A failed batch aborts that
/// condition only; it is recorded in the manifest and reflected in
/// failed_conditions.
RunOutcome run_full(const RunConfig& cfg);

// Small shared utilities.
std::uint32_t crc32_of_file(const std::filesystem::path& path);
std::string case_id_from_path(const std::filesystem::path& path); // strips .nii/.nii.gz
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

} // namespace ctqa
