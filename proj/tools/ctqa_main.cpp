#include <CLI11.hpp>

#include <iostream>

#include "ctqa/errors.hpp"
#include "ctqa/pipeline.hpp"

namespace {

struct CliOverrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<double> threshold;
    std::optional<double> radius;
    std::optional<int> min_readers;
    std::optional<double> sigma_base;
    std::optional<std::string> noise_model;
    std::optional<std::string> output_root;
    bool dry_run = false;
};

// Config file first, CLI flags on top.
ctqa::RunConfig build_config(const CliOverrides& o) {
    ctqa::RunConfig cfg;
    if (!o.config.empty()) cfg = ctqa::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.jobs) cfg.jobs = *o.jobs;
    if (o.threshold) cfg.confidence_threshold = *o.threshold;
    if (o.radius) cfg.match_radius_mm = *o.radius;
    if (o.min_readers) cfg.min_readers = *o.min_readers;
    if (o.sigma_base) cfg.sigma_base_hu = *o.sigma_base;
    if (o.noise_model) cfg.noise_law = ctqa::noise_law_from_name(*o.noise_model);
    if (o.output_root) cfg.output_root = *o.output_root;
    cfg.dry_run = o.dry_run;
    return cfg;
}

void add_common_flags(CLI::App* cmd, CliOverrides& o) {
    cmd->add_option("--config", o.config, "JSON config file (flags override it)");
    cmd->add_option("--seed", o.seed, "master seed (echoed in the manifest)");
    cmd->add_option("--jobs", o.jobs, "parallel case fan-out bound");
    cmd->add_option("--threshold", o.threshold, "confidence threshold");
    cmd->add_option("--radius", o.radius, "match radius in mm");
    cmd->add_option("--min-readers", o.min_readers, "consensus reader minimum");
    cmd->add_option("--sigma-base", o.sigma_base, "added-noise sigma at full dose, HU");
    cmd->add_option("--noise-model", o.noise_model, "inverse-sqrt (default) or variance-gap");
    cmd->add_option("--out", o.output_root, "output root (default $CTQA_OUT_ROOT or ./out)");
    cmd->add_flag("--dry-run", o.dry_run, "print the plan, write nothing");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CT acquisition-robustness QA harness for lung-nodule detectors"};
    app.require_subcommand(1);

    CliOverrides o;
    std::vector<std::string> inputs;
    std::string xml_dir, geometry_csv, volumes_dir, consensus_csv, detections, coverage;
    std::string phantom_spec;
    int phantom_count = 0;

    auto* degrade = app.add_subcommand("degrade", "apply acquisition conditions to volumes");
    add_common_flags(degrade, o);
    degrade->add_option("inputs", inputs, "NIfTI volumes or directories");

    auto* consensus = app.add_subcommand("consensus", "merge reader annotations into consensus nodules");
    add_common_flags(consensus, o);
    consensus->add_option("--xml-dir", xml_dir, "directory of per-case LIDC XML files");
    consensus->add_option("--geometry-csv", geometry_csv, "per-case geometry table");
    consensus->add_option("--volumes-dir", volumes_dir, "volumes to read geometry from");

    auto* evaluate = app.add_subcommand("evaluate", "match detections and write reports");
    add_common_flags(evaluate, o);
    evaluate->add_option("--consensus", consensus_csv, "consensus nodules CSV");
    evaluate->add_option("--detections", detections, "detections CSV or JSON-lines");
    evaluate->add_option("--geometry-csv", geometry_csv, "geometry for voxel-frame detections");
    evaluate->add_option("--volumes-dir", volumes_dir, "volumes to read geometry from");
    evaluate->add_option("--coverage", coverage, "degrade manifest marking covered cells");

    auto* sweep = app.add_subcommand("sweep", "threshold sweep only");
    add_common_flags(sweep, o);
    sweep->add_option("--consensus", consensus_csv, "consensus nodules CSV");
    sweep->add_option("--detections", detections, "detections CSV or JSON-lines");
    sweep->add_option("--geometry-csv", geometry_csv, "geometry for voxel-frame detections");
    sweep->add_option("--volumes-dir", volumes_dir, "volumes to read geometry from");
    sweep->add_option("--coverage", coverage, "degrade manifest marking covered cells");

    auto* phantom = app.add_subcommand("phantom", "generate synthetic volumes with known truth");
    add_common_flags(phantom, o);
    phantom->add_option("--spec", phantom_spec, "phantom spec JSON");
    phantom->add_option("--count", phantom_count, "generate the default mixed suite");

    auto* run = app.add_subcommand("run", "full pipeline with an external model");
    add_common_flags(run, o);
    run->add_option("inputs", inputs, "NIfTI volumes or directories");
    run->add_option("--consensus", consensus_csv, "consensus nodules CSV");
    run->add_option("--spec", phantom_spec, "phantom spec JSON");
    run->add_option("--count", phantom_count, "phantom suite size");
    std::string model_command;
    int timeout_s = 0;
    run->add_option("--model", model_command, "command template with {input_dir} and {output}");
    run->add_option("--timeout", timeout_s, "model batch timeout, seconds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        ctqa::RunConfig cfg = build_config(o);
        for (const auto& p : inputs) cfg.inputs.emplace_back(p);
        if (!xml_dir.empty()) cfg.xml_dir = xml_dir;
        if (!geometry_csv.empty()) cfg.geometry_csv = geometry_csv;
        if (!volumes_dir.empty()) cfg.volumes_dir = volumes_dir;
        if (!consensus_csv.empty()) cfg.consensus_csv = consensus_csv;
        if (!detections.empty()) cfg.detections_path = detections;
        if (!coverage.empty()) cfg.coverage_manifest = coverage;
        if (!phantom_spec.empty()) cfg.phantom_spec = phantom_spec;
        if (phantom_count > 0) cfg.phantom_count = phantom_count;
        if (!model_command.empty()) cfg.model_command = model_command;
        if (timeout_s > 0) cfg.model_timeout_s = timeout_s;

        if (degrade->parsed()) {
            const auto out = ctqa::run_degrade(cfg);
            if (!cfg.dry_run)
                std::cout << "wrote " << out.volumes_written << " volume(s); manifest "
                          << out.manifest_path.string() << '\n';
        } else if (consensus->parsed()) {
            const auto out = ctqa::run_consensus(cfg);
            std::cout << out.csv_path.string() << ": " << out.nodules << " consensus nodule(s) from "
                      << out.cases << " case(s), " << out.skipped_marks_only
                      << " mark-only annotation(s) skipped\n";
        } else if (evaluate->parsed()) {
            ctqa::run_evaluate(cfg);
        } else if (sweep->parsed()) {
            const auto out = ctqa::run_sweep(cfg);
            std::cout << "wrote " << (out.out_dir / "threshold_sweep.csv").string() << '\n';
        } else if (phantom->parsed()) {
            const auto out = ctqa::run_phantom(cfg);
            std::cout << "wrote " << out.phantoms << " phantom(s) to " << out.cases_dir.string()
                      << "; truth " << out.truth_csv.string() << '\n';
        } else if (run->parsed()) {
            const auto out = ctqa::run_full(cfg);
            if (!out.failed_conditions.empty()) {
                std::cerr << "model batch failed for:";
                for (const auto& c : out.failed_conditions) std::cerr << ' ' << c;
                std::cerr << '\n';
                return 3;
            }
        }
        return 0;
    } catch (const ctqa::usage_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ctqa::model_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
