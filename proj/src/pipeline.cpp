#include "ctqa/pipeline.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ctqa/annotations.hpp"
#include "ctqa/csv.hpp"
#include "ctqa/detections.hpp"
#include "ctqa/errors.hpp"
#include "ctqa/nifti.hpp"
#include "ctqa/phantom.hpp"
#include "ctqa/report.hpp"
#include "ctqa/rng.hpp"

namespace ctqa {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write: " + path.string());
    out << content;
    if (!out) throw data_error("write failure: " + path.string());
}

std::uint32_t crc32_of_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open for checksum: " + path.string());
    std::vector<char> buf(1 << 20);
    uLong crc = crc32(0L, Z_NULL, 0);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = in.gcount();
        if (n > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(crc);
}

std::string case_id_from_path(const fs::path& path) {
    std::string name = path.filename().string();
    for (const char* suffix : {".nii.gz", ".nii"}) {
        const std::size_t len = std::strlen(suffix);
        if (name.size() > len && name.compare(name.size() - len, len, suffix) == 0)
            return name.substr(0, name.size() - len);
    }
    return fs::path(name).stem().string();
}

namespace {

std::string crc_hex(std::uint32_t crc) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc);
    return buf;
}

fs::path resolve_output_root(const RunConfig& cfg) {
    if (!cfg.output_root.empty()) return cfg.output_root;
    if (const char* env = std::getenv(kOutputRootEnvVar); env && *env) return env;
    return "out";
}

std::vector<Condition> effective_conditions(const RunConfig& cfg) {
    return cfg.conditions.empty() ? condition_suite() : cfg.conditions;
}

NoiseModel noise_model_of(const RunConfig& cfg) {
    return NoiseModel{cfg.sigma_base_hu, cfg.seed, cfg.noise_law};
}

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs) {
    std::vector<fs::path> files;
    for (const auto& p : inputs) {
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p)) {
                const std::string name = e.path().filename().string();
                if (name.ends_with(".nii") || name.ends_with(".nii.gz")) files.push_back(e.path());
            }
        } else if (fs::exists(p)) {
            files.push_back(p);
        } else {
            throw data_error("input does not exist: " + p.string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

void parallel_for(int jobs, std::size_t n, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(jobs, static_cast<int>(n));
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::map<std::string, Geometry> load_geometry_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open geometry CSV: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw data_error("geometry CSV: empty file");
    const std::vector<std::string> expected = {"case_id",   "origin_x",  "origin_y", "origin_z",
                                               "spacing_x", "spacing_y", "spacing_z", "dim_x",
                                               "dim_y",     "dim_z"};
    if (split_csv_row(line) != expected)
        throw data_error("geometry CSV: unexpected header '" + line + "'");
    std::map<std::string, Geometry> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv_row(line);
        const std::string ctx = "geometry CSV row " + std::to_string(row);
        if (f.size() != 10) throw data_error(ctx + ": expected 10 fields");
        Geometry g;
        g.origin = {parse_double_field(f[1], ctx), parse_double_field(f[2], ctx),
                    parse_double_field(f[3], ctx)};
        g.spacing = {parse_double_field(f[4], ctx), parse_double_field(f[5], ctx),
                     parse_double_field(f[6], ctx)};
        g.dims = {parse_int_field(f[7], ctx), parse_int_field(f[8], ctx), parse_int_field(f[9], ctx)};
        out[f[0]] = g;
    }
    return out;
}

// Geometry resolution for voxel-frame detections and XML contours: an
// explicit geometry CSV wins, then volume headers from volumes_dir.
class GeometrySource {
public:
    explicit GeometrySource(const RunConfig& cfg) : volumes_dir_(cfg.volumes_dir) {
        if (!cfg.geometry_csv.empty()) table_ = load_geometry_csv(cfg.geometry_csv);
    }

    const Geometry* find(const std::string& case_id) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (const auto it = table_.find(case_id); it != table_.end()) return &it->second;
        if (volumes_dir_.empty()) return nullptr;
        for (const char* ext : {".nii.gz", ".nii"}) {
            const fs::path p = volumes_dir_ / (case_id + ext);
            if (fs::exists(p)) {
                table_[case_id] = read_volume(p).geom;
                return &table_[case_id];
            }
        }
        return nullptr;
    }

    GeometryLookup lookup() {
        return [this](const std::string& case_id) { return find(case_id); };
    }

private:
    fs::path volumes_dir_;
    std::map<std::string, Geometry> table_;
    std::mutex mutex_;
};

json condition_to_json(const Condition& c) {
    json j;
    j["id"] = c.id;
    switch (c.kind) {
        case ConditionKind::Baseline: j["kind"] = "baseline"; break;
        case ConditionKind::DoseFraction:
            j["kind"] = "dose";
            j["fraction"] = c.dose_fraction;
            break;
        case ConditionKind::SliceThickness:
            j["kind"] = "thickness";
            j["mm"] = c.thickness_mm;
            break;
    }
    return j;
}

Condition condition_from_json(const json& j) {
    const std::string id = j.at("id").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "baseline") return Condition::baseline(id);
    if (kind == "dose") return Condition::dose(id, j.at("fraction").get<double>());
    if (kind == "thickness") return Condition::thickness(id, j.at("mm").get<double>());
    throw usage_error("unknown condition kind '" + kind + "'");
}

} // namespace

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw usage_error(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw usage_error(path.string() + ": config must be a JSON object");

    static const std::set<std::string> known = {
        "schema_version", "inputs",        "output_root",     "seed",
        "sigma_base_hu",  "noise_law",     "min_slices",      "min_readers",
        "merge_radius_mm", "confidence_threshold", "match_radius_mm", "sweep_thresholds",
        "conditions",     "model_command", "model_timeout_s", "jobs",
        "xml_dir",        "geometry_csv",  "volumes_dir",     "consensus_csv",
        "detections",     "coverage_manifest", "phantom_spec", "phantom_count"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw usage_error(path.string() + ": unknown config key '" + key + "'");

    if (j.value("schema_version", 0) != kConfigSchemaVersion)
        throw usage_error(path.string() + ": schema_version must be " +
                          std::to_string(kConfigSchemaVersion));

    RunConfig cfg;
    if (j.contains("inputs"))
        for (const auto& p : j["inputs"]) cfg.inputs.emplace_back(p.get<std::string>());
    if (j.contains("output_root")) cfg.output_root = j["output_root"].get<std::string>();
    cfg.seed = j.value("seed", cfg.seed);
    cfg.sigma_base_hu = j.value("sigma_base_hu", cfg.sigma_base_hu);
    if (j.contains("noise_law")) cfg.noise_law = noise_law_from_name(j["noise_law"].get<std::string>());
    cfg.min_slices = j.value("min_slices", cfg.min_slices);
    cfg.min_readers = j.value("min_readers", cfg.min_readers);
    cfg.merge_radius_mm = j.value("merge_radius_mm", cfg.merge_radius_mm);
    cfg.confidence_threshold = j.value("confidence_threshold", cfg.confidence_threshold);
    cfg.match_radius_mm = j.value("match_radius_mm", cfg.match_radius_mm);
    if (j.contains("sweep_thresholds")) {
        cfg.sweep_thresholds.clear();
        for (const auto& t : j["sweep_thresholds"]) cfg.sweep_thresholds.push_back(t.get<double>());
    }
    if (j.contains("conditions")) {
        cfg.conditions.clear();
        for (const auto& cj : j["conditions"]) cfg.conditions.push_back(condition_from_json(cj));
    }
    cfg.model_command = j.value("model_command", cfg.model_command);
    cfg.model_timeout_s = j.value("model_timeout_s", cfg.model_timeout_s);
    cfg.jobs = j.value("jobs", cfg.jobs);
    if (j.contains("xml_dir")) cfg.xml_dir = j["xml_dir"].get<std::string>();
    if (j.contains("geometry_csv")) cfg.geometry_csv = j["geometry_csv"].get<std::string>();
    if (j.contains("volumes_dir")) cfg.volumes_dir = j["volumes_dir"].get<std::string>();
    if (j.contains("consensus_csv")) cfg.consensus_csv = j["consensus_csv"].get<std::string>();
    if (j.contains("detections")) cfg.detections_path = j["detections"].get<std::string>();
    if (j.contains("coverage_manifest")) cfg.coverage_manifest = j["coverage_manifest"].get<std::string>();
    if (j.contains("phantom_spec")) cfg.phantom_spec = j["phantom_spec"].get<std::string>();
    cfg.phantom_count = j.value("phantom_count", cfg.phantom_count);
    return cfg;
}

DegradeOutcome run_degrade(const RunConfig& cfg) {
    const fs::path out_root = resolve_output_root(cfg);
    const auto conditions = effective_conditions(cfg);
    const auto noise = noise_model_of(cfg);
    const auto files = expand_inputs(cfg.inputs);
    if (files.empty()) throw usage_error("degrade: no input volumes");

    if (cfg.dry_run) {
        json plan;
        plan["dry_run"] = true;
        plan["planned"] = json::array();
        for (const auto& f : files)
            for (const auto& c : conditions)
                plan["planned"].push_back({{"case_id", case_id_from_path(f)},
                                           {"condition_id", c.id},
                                           {"input", f.string()},
                                           {"output", (out_root / c.id / (case_id_from_path(f) + ".nii.gz")).string()}});
        std::cout << plan.dump(2) << '\n';
        return {};
    }

    fs::create_directories(out_root);
    for (const auto& c : conditions) fs::create_directories(out_root / c.id);

    struct CaseResult {
        std::string case_id;
        fs::path input;
        Geometry geometry;
        std::string affine_source;
        std::uint32_t input_crc = 0;
        bool excluded = false;
        std::string exclusion_reason;
        std::vector<json> entries;
    };
    std::vector<CaseResult> results(files.size());

    parallel_for(cfg.jobs, files.size(), [&](std::size_t i) {
        CaseResult& r = results[i];
        r.input = files[i];
        r.case_id = case_id_from_path(files[i]);
        r.input_crc = crc32_of_file(files[i]);

        const Volume v = read_volume(files[i]);
        r.geometry = v.geom;
        r.affine_source = affine_source_name(v.affine_source);

        const auto report = validate_volume(v, cfg.min_slices);
        if (!report.ok()) {
            r.excluded = true;
            r.exclusion_reason = report.summary();
            return;
        }

        for (const auto& c : conditions) {
            auto applied = apply_condition(v, c, noise, r.case_id);
            const fs::path out_path = out_root / c.id / (r.case_id + ".nii.gz");
            write_volume(applied.volume, out_path);

            json e;
            e["case_id"] = r.case_id;
            e["condition_id"] = c.id;
            e["input"] = files[i].string();
            e["output"] = out_path.string();
            e["input_crc32"] = crc_hex(r.input_crc);
            e["output_crc32"] = crc_hex(crc32_of_file(out_path));
            e["affine_source"] = r.affine_source;
            if (applied.sigma_hu) e["sigma_hu"] = *applied.sigma_hu;
            if (applied.noise_stream_seed) e["stream_seed"] = *applied.noise_stream_seed;
            if (applied.window_slices) e["window_slices"] = *applied.window_slices;
            if (applied.effective_thickness_mm)
                e["effective_thickness_mm"] = *applied.effective_thickness_mm;
            r.entries.push_back(std::move(e));
        }
    });

    DegradeOutcome outcome;
    json manifest;
    manifest["schema_version"] = 1;
    manifest["tool"] = kToolVersion;
    manifest["kind"] = "degrade";
    manifest["seed"] = cfg.seed;
    manifest["sigma_base_hu"] = cfg.sigma_base_hu;
    manifest["noise_law"] = noise_law_name(cfg.noise_law);
    manifest["min_slices"] = cfg.min_slices;
    manifest["conditions"] = json::array();
    for (const auto& c : conditions) manifest["conditions"].push_back(condition_to_json(c));
    manifest["excluded"] = json::array();
    manifest["entries"] = json::array();

    for (const auto& r : results) {
        if (r.excluded) {
            manifest["excluded"].push_back(
                {{"case_id", r.case_id}, {"path", r.input.string()}, {"reason", r.exclusion_reason}});
            outcome.excluded_cases.push_back(r.case_id);
            continue;
        }
        outcome.case_geometry[r.case_id] = r.geometry;
        for (const auto& e : r.entries) {
            manifest["entries"].push_back(e);
            outcome.covered.emplace_back(r.case_id, e.at("condition_id").get<std::string>());
            ++outcome.volumes_written;
        }
    }

    outcome.manifest_path = out_root / "manifest.json";
    write_text_file(outcome.manifest_path, manifest.dump(2) + "\n");
    return outcome;
}

ConsensusOutcome run_consensus(const RunConfig& cfg) {
    if (cfg.xml_dir.empty()) throw usage_error("consensus: --xml-dir is required");
    if (!fs::is_directory(cfg.xml_dir))
        throw usage_error("consensus: not a directory: " + cfg.xml_dir.string());
    if (cfg.geometry_csv.empty() && cfg.volumes_dir.empty())
        throw usage_error("consensus: a geometry source (--geometry-csv or --volumes-dir) is required");

    std::vector<fs::path> xml_files;
    for (const auto& e : fs::directory_iterator(cfg.xml_dir))
        if (e.path().extension() == ".xml") xml_files.push_back(e.path());
    std::sort(xml_files.begin(), xml_files.end());
    if (xml_files.empty()) throw data_error("consensus: no .xml files in " + cfg.xml_dir.string());

    GeometrySource geometry(cfg);
    ConsensusOutcome outcome;
    std::vector<ConsensusNodule> all;
    for (const auto& xml_path : xml_files) {
        const std::string case_id = xml_path.stem().string();
        const Geometry* g = geometry.find(case_id);
        if (!g) throw data_error("consensus: no geometry for case '" + case_id + "'");

        auto parsed = parse_lidc_xml(read_text_file(xml_path), case_id);
        outcome.skipped_marks_only += parsed.skipped_marks_only;
        for (auto& a : parsed.annotations) derive_world_fields(a, *g);
        auto merged = build_consensus(parsed.annotations, cfg.min_readers, cfg.merge_radius_mm);
        all.insert(all.end(), merged.begin(), merged.end());
        ++outcome.cases;
    }
    outcome.nodules = static_cast<int>(all.size());

    const fs::path out_root = resolve_output_root(cfg);
    fs::create_directories(out_root);
    outcome.csv_path = out_root / "consensus.csv";
    std::ostringstream ss;
    write_consensus_csv(all, ss);
    write_text_file(outcome.csv_path, ss.str());
    return outcome;
}

namespace {

Coverage coverage_from_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw data_error(path.string() + ": " + e.what());
    }
    Coverage cov;
    for (const auto& e : j.at("entries"))
        cov.emplace(e.at("case_id").get<std::string>(), e.at("condition_id").get<std::string>());
    return cov;
}

struct EvalInputs {
    std::map<std::string, std::vector<ConsensusNodule>> consensus;
    std::vector<Detection> detections;
    std::vector<std::string> condition_ids;
    std::optional<Coverage> coverage;
};

EvalInputs gather_eval_inputs(const RunConfig& cfg, GeometrySource& geometry) {
    if (cfg.consensus_csv.empty()) throw usage_error("evaluate: --consensus CSV is required");
    if (cfg.detections_path.empty()) throw usage_error("evaluate: --detections file is required");

    EvalInputs in;
    {
        std::ifstream f(cfg.consensus_csv);
        if (!f) throw data_error("cannot open consensus CSV: " + cfg.consensus_csv.string());
        for (auto& n : read_consensus_csv(f)) in.consensus[n.case_id].push_back(std::move(n));
    }
    in.detections = parse_detections(cfg.detections_path, geometry.lookup());

    if (!cfg.conditions.empty()) {
        for (const auto& c : cfg.conditions) in.condition_ids.push_back(c.id);
    } else {
        std::set<std::string> seen;
        for (const auto& d : in.detections) seen.insert(d.condition_id);
        in.condition_ids.assign(seen.begin(), seen.end());
        if (in.condition_ids.empty()) in.condition_ids.push_back("baseline");
    }
    if (!cfg.coverage_manifest.empty()) in.coverage = coverage_from_manifest(cfg.coverage_manifest);
    return in;
}

void print_detection_diagnostics(const std::vector<Detection>& detections,
                                 const GeometryLookup& lookup) {
    const auto diag = detection_diagnostics(detections, lookup);
    std::cout << "detections: " << diag.total << " (" << diag.out_of_volume
              << " outside volume bounds, " << diag.without_geometry << " without geometry)\n";
}

EvaluateOutcome write_reports(const RunConfig& cfg, const SensitivityReport& report,
                              bool sweep_only) {
    EvaluateOutcome out;
    out.report = report;
    out.out_dir = resolve_output_root(cfg);
    fs::create_directories(out.out_dir);

    write_text_file(out.out_dir / "threshold_sweep.csv", threshold_sweep_csv(report));
    write_text_file(out.out_dir / "sweep.svg", sweep_svg(report));
    if (sweep_only) return out;

    const std::string table = render_condition_table(report);
    std::cout << table;
    write_text_file(out.out_dir / "condition_table.txt", table);
    write_text_file(out.out_dir / "sensitivity_by_condition.csv", condition_table_csv(report));
    if (!report.case_ids.empty())
        write_text_file(out.out_dir / "case_matrix.svg", case_matrix_svg(report));
    write_text_file(out.out_dir / "per_case_matrix.csv", per_case_matrix_csv(report));

    const bool has_baseline =
        std::any_of(report.by_condition.begin(), report.by_condition.end(),
                    [](const ConditionStats& c) { return c.condition_id == "baseline"; });
    if (has_baseline) write_text_file(out.out_dir / "deltas.csv", deltas_csv(report));
    return out;
}

} // namespace

EvaluateOutcome run_evaluate(const RunConfig& cfg) {
    GeometrySource geometry(cfg);
    const auto in = gather_eval_inputs(cfg, geometry);
    print_detection_diagnostics(in.detections, geometry.lookup());
    const MatchParams params{cfg.confidence_threshold, cfg.match_radius_mm};
    const auto report = evaluate_cohort(in.consensus, in.detections, in.condition_ids, params,
                                        cfg.sweep_thresholds, in.coverage);
    return write_reports(cfg, report, /*sweep_only=*/false);
}

EvaluateOutcome run_sweep(const RunConfig& cfg) {
    GeometrySource geometry(cfg);
    const auto in = gather_eval_inputs(cfg, geometry);
    const MatchParams params{cfg.confidence_threshold, cfg.match_radius_mm};
    const auto report = evaluate_cohort(in.consensus, in.detections, in.condition_ids, params,
                                        cfg.sweep_thresholds, in.coverage);
    return write_reports(cfg, report, /*sweep_only=*/true);
}

PhantomOutcome run_phantom(const RunConfig& cfg) {
    std::vector<PhantomSpec> specs;
    if (!cfg.phantom_spec.empty())
        specs.push_back(load_phantom_spec(cfg.phantom_spec));
    else if (cfg.phantom_count > 0)
        specs = default_phantom_suite(cfg.phantom_count, cfg.seed);
    else
        throw usage_error("phantom: provide --spec or --count");

    const fs::path out_root = resolve_output_root(cfg);
    PhantomOutcome outcome;
    outcome.cases_dir = out_root / "cases";
    fs::create_directories(outcome.cases_dir);
    fs::create_directories(out_root / "specs");

    std::vector<ConsensusNodule> truth;
    for (const auto& spec : specs) {
        auto [volume, nodules] = generate_phantom(spec);
        write_volume(volume, outcome.cases_dir / (spec.case_id + ".nii.gz"));
        save_phantom_spec(spec, out_root / "specs" / (spec.case_id + ".json"));
        truth.insert(truth.end(), nodules.begin(), nodules.end());
        ++outcome.phantoms;
    }

    outcome.truth_csv = out_root / "truth.csv";
    std::ostringstream ss;
    write_consensus_csv(truth, ss);
    write_text_file(outcome.truth_csv, ss.str());
    return outcome;
}

RunOutcome run_full(const RunConfig& cfg) {
    // Validate the external contract before any work happens.
    if (cfg.model_command.empty()) throw usage_error("run: model_command is required");
    if (cfg.model_command.find("{input_dir}") == std::string::npos ||
        cfg.model_command.find("{output}") == std::string::npos)
        throw usage_error("run: model_command must contain {input_dir} and {output}");
    const bool phantom_mode = cfg.phantom_count > 0 || !cfg.phantom_spec.empty();
    if (!phantom_mode && cfg.inputs.empty())
        throw usage_error("run: provide input volumes or a phantom configuration");
    if (!phantom_mode && cfg.consensus_csv.empty())
        throw usage_error("run: a consensus CSV is required for non-phantom inputs");

    const fs::path out_root = resolve_output_root(cfg);

    if (cfg.dry_run) {
        json plan;
        plan["dry_run"] = true;
        plan["output_root"] = out_root.string();
        plan["model_command"] = cfg.model_command;
        json steps = json::array();
        if (phantom_mode) steps.push_back("generate phantoms + truth.csv");
        steps.push_back("degrade inputs into out/<condition>/<case>.nii.gz");
        for (const auto& c : effective_conditions(cfg))
            steps.push_back("run model batch for condition " + c.id);
        steps.push_back("evaluate detections and write reports");
        plan["steps"] = std::move(steps);
        std::cout << plan.dump(2) << '\n';
        return {};
    }

    RunConfig stage = cfg;
    if (phantom_mode) {
        RunConfig pcfg = cfg;
        pcfg.output_root = out_root / "phantom";
        const auto phantoms = run_phantom(pcfg);
        stage.inputs = {phantoms.cases_dir};
        stage.consensus_csv = phantoms.truth_csv;
    }

    stage.output_root = out_root / "degraded";
    const auto degraded = run_degrade(stage);

    const auto conditions = effective_conditions(cfg);
    const fs::path det_dir = out_root / "detections";
    const fs::path log_dir = out_root / "logs";
    fs::create_directories(det_dir);
    fs::create_directories(log_dir);

    RunOutcome outcome;
    json model_manifest;
    model_manifest["schema_version"] = 1;
    model_manifest["tool"] = kToolVersion;
    model_manifest["kind"] = "model_runs";
    model_manifest["runs"] = json::array();

    std::vector<Detection> detections;
    GeometrySource geometry(cfg);
    const auto lookup = [&](const std::string& case_id) -> const Geometry* {
        const auto it = degraded.case_geometry.find(case_id);
        if (it != degraded.case_geometry.end()) return &it->second;
        return geometry.find(case_id);
    };

    Coverage coverage(degraded.covered.begin(), degraded.covered.end());
    for (const auto& c : conditions) {
        const fs::path input_dir = stage.output_root / c.id;
        const fs::path output = det_dir / (c.id + ".csv");
        const auto run = run_external_model(cfg.model_command, input_dir, output,
                                            cfg.model_timeout_s, log_dir / (c.id + ".stdout.log"),
                                            log_dir / (c.id + ".stderr.log"));

        json rj;
        rj["condition_id"] = c.id;
        rj["command"] = run.command;
        rj["exit_code"] = run.exit_code;
        rj["timed_out"] = run.timed_out;
        rj["duration_s"] = run.duration_s;
        rj["detections"] = output.string();

        bool failed = run.timed_out || run.exit_code != 0 || !fs::exists(output);
        if (!failed) {
            try {
                const auto batch = parse_detections(output, lookup);
                detections.insert(detections.end(), batch.begin(), batch.end());
            } catch (const data_error& e) {
                failed = true;
                rj["parse_error"] = e.what();
            }
        }
        rj["status"] = failed ? "failed" : "ok";
        model_manifest["runs"].push_back(std::move(rj));

        if (failed) {
            outcome.failed_conditions.push_back(c.id);
            // Drop the condition's cells from coverage: absent, not zero.
            for (auto it = coverage.begin(); it != coverage.end();)
                it = (it->second == c.id) ? coverage.erase(it) : std::next(it);
        }
    }
    write_text_file(out_root / "model_runs.json", model_manifest.dump(2) + "\n");

    RunConfig eval_cfg = cfg;
    eval_cfg.output_root = out_root / "reports";
    eval_cfg.consensus_csv = stage.consensus_csv;
    std::vector<std::string> condition_ids;
    for (const auto& c : conditions) condition_ids.push_back(c.id);

    EvalInputs in;
    {
        std::ifstream f(eval_cfg.consensus_csv);
        if (!f) throw data_error("cannot open consensus CSV: " + eval_cfg.consensus_csv.string());
        for (auto& n : read_consensus_csv(f)) in.consensus[n.case_id].push_back(std::move(n));
    }
    print_detection_diagnostics(detections, lookup);
    const MatchParams params{cfg.confidence_threshold, cfg.match_radius_mm};
    const auto report = evaluate_cohort(in.consensus, detections, condition_ids, params,
                                        cfg.sweep_thresholds, std::optional<Coverage>(coverage));
    outcome.eval = write_reports(eval_cfg, report, /*sweep_only=*/false);
    return outcome;
}

} // namespace ctqa
