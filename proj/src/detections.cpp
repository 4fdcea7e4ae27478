#include "ctqa/detections.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>
#include <tuple>

#include "ctqa/csv.hpp"
#include "ctqa/errors.hpp"

namespace ctqa {

namespace {

const std::vector<std::string> kDetectionHeader = {"case_id", "condition_id", "frame",
                                                   "x",       "y",            "z",
                                                   "confidence"};

Detection finish_row(std::string case_id, std::string condition_id, const std::string& frame,
                     double x, double y, double z, double confidence,
                     const GeometryLookup& geometry, const std::string& ctx) {
    Detection d;
    d.case_id = std::move(case_id);
    d.condition_id = std::move(condition_id);
    d.confidence = confidence;

    if (frame == "world")
        d.source_frame = CoordFrame::World;
    else if (frame == "voxel")
        d.source_frame = CoordFrame::Voxel;
    else
        throw data_error(ctx + ": unknown frame '" + frame + "' (expected world or voxel)");

    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
        throw data_error(ctx + ": non-finite coordinate");
    if (!(confidence >= 0.0 && confidence <= 1.0))
        throw data_error(ctx + ": confidence " + fmt_sig(confidence) + " outside [0,1]");

    if (d.source_frame == CoordFrame::Voxel) {
        const Geometry* g = geometry(d.case_id);
        if (!g) throw data_error(ctx + ": unknown case_id '" + d.case_id + "' (no geometry)");
        d.position_world = voxel_to_world(*g, {x, y, z});
    } else {
        d.position_world = {x, y, z};
    }
    return d;
}

} // namespace

std::vector<Detection> parse_detections_csv(std::istream& in, const GeometryLookup& geometry) {
    std::string line;
    if (!std::getline(in, line)) throw data_error("detections CSV: empty file (missing header)");
    {
        const auto header = split_csv_row(line);
        if (header != kDetectionHeader)
            throw data_error("detections CSV: unexpected header '" + line +
                             "' (expected case_id,condition_id,frame,x,y,z,confidence)");
    }

    std::vector<Detection> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::string ctx = "detections CSV row " + std::to_string(row);
        const auto f = split_csv_row(line);
        if (f.size() != 7)
            throw data_error(ctx + ": expected 7 fields, got " + std::to_string(f.size()));
        out.push_back(finish_row(f[0], f[1], f[2], parse_double_field(f[3], ctx),
                                 parse_double_field(f[4], ctx), parse_double_field(f[5], ctx),
                                 parse_double_field(f[6], ctx), geometry, ctx));
    }
    sort_detections(out);
    return out;
}

std::vector<Detection> parse_detections_jsonl(std::istream& in, const GeometryLookup& geometry) {
    std::vector<Detection> out;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string ctx = "detections JSONL row " + std::to_string(row);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw data_error(ctx + ": " + e.what());
        }
        for (const char* field : {"case_id", "condition_id", "frame", "x", "y", "z", "confidence"})
            if (!j.contains(field)) throw data_error(ctx + ": missing field '" + std::string(field) + "'");
        if (!j["x"].is_number() || !j["y"].is_number() || !j["z"].is_number() ||
            !j["confidence"].is_number())
            throw data_error(ctx + ": x/y/z/confidence must be numbers");
        out.push_back(finish_row(j["case_id"].get<std::string>(), j["condition_id"].get<std::string>(),
                                 j["frame"].get<std::string>(), j["x"].get<double>(),
                                 j["y"].get<double>(), j["z"].get<double>(),
                                 j["confidence"].get<double>(), geometry, ctx));
    }
    sort_detections(out);
    return out;
}

std::vector<Detection> parse_detections(const std::filesystem::path& path,
                                        const GeometryLookup& geometry) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open detections file: " + path.string());

    const auto ext = path.extension().string();
    bool jsonl = (ext == ".jsonl" || ext == ".ndjson");
    if (!jsonl) {
        // Sniff: a JSON-lines file starts with '{'.
        const int first = in.peek();
        jsonl = (first == '{');
    }
    return jsonl ? parse_detections_jsonl(in, geometry) : parse_detections_csv(in, geometry);
}

void sort_detections(std::vector<Detection>& detections) {
    std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        return std::tie(a.case_id, a.condition_id) < std::tie(b.case_id, b.condition_id) ||
               (a.case_id == b.case_id && a.condition_id == b.condition_id &&
                (a.confidence > b.confidence ||
                 (a.confidence == b.confidence &&
                  std::tie(a.position_world.x, a.position_world.y, a.position_world.z) <
                      std::tie(b.position_world.x, b.position_world.y, b.position_world.z))));
    });
}

DetectionDiagnostics detection_diagnostics(const std::vector<Detection>& detections,
                                           const GeometryLookup& geometry) {
    DetectionDiagnostics diag;
    diag.total = static_cast<std::int64_t>(detections.size());
    for (const auto& d : detections) {
        const Geometry* g = geometry ? geometry(d.case_id) : nullptr;
        if (!g) {
            ++diag.without_geometry;
            continue;
        }
        const Vec3 v = world_to_voxel(*g, d.position_world);
        if (v.x < 0 || v.y < 0 || v.z < 0 || v.x > static_cast<double>(g->dims.x - 1) ||
            v.y > static_cast<double>(g->dims.y - 1) || v.z > static_cast<double>(g->dims.z - 1))
            ++diag.out_of_volume;
    }
    return diag;
}

void write_detections_csv(const std::vector<Detection>& detections, std::ostream& out) {
    out << "case_id,condition_id,frame,x,y,z,confidence\n";
    for (const auto& d : detections) {
        out << d.case_id << ',' << d.condition_id << ",world," << fmt_sig(d.position_world.x)
            << ',' << fmt_sig(d.position_world.y) << ',' << fmt_sig(d.position_world.z) << ','
            << fmt_sig(d.confidence) << '\n';
    }
}

namespace {

std::string substitute_placeholders(const std::string& tmpl, const std::string& key,
                                    const std::string& value) {
    std::string out = tmpl;
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = out.find(token, pos)) != std::string::npos) {
        out.replace(pos, token.size(), value);
        pos += value.size();
    }
    return out;
}

} // namespace

ModelRunResult run_external_model(const std::string& command_template,
                                  const std::filesystem::path& input_dir,
                                  const std::filesystem::path& output_path, int timeout_s,
                                  const std::filesystem::path& stdout_log,
                                  const std::filesystem::path& stderr_log) {
    if (command_template.find("{input_dir}") == std::string::npos)
        throw usage_error("model command template lacks the {input_dir} placeholder");
    if (command_template.find("{output}") == std::string::npos)
        throw usage_error("model command template lacks the {output} placeholder");

    ModelRunResult result;
    result.command = substitute_placeholders(
        substitute_placeholders(command_template, "input_dir", input_dir.string()), "output",
        output_path.string());

    const auto t0 = std::chrono::steady_clock::now();

    const pid_t pid = fork();
    if (pid < 0) throw model_error("fork failed");
    if (pid == 0) {
        // Child: own process group so a timeout can kill the whole tree.
        setpgid(0, 0);
        const int out_fd = open(stdout_log.string().c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        const int err_fd = open(stderr_log.string().c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (out_fd >= 0) dup2(out_fd, STDOUT_FILENO);
        if (err_fd >= 0) dup2(err_fd, STDERR_FILENO);
        execl("/bin/sh", "sh", "-c", result.command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }

    const auto deadline = t0 + std::chrono::seconds(timeout_s);
    int status = 0;
    for (;;) {
        const pid_t r = waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0) throw model_error("waitpid failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            kill(-pid, SIGKILL);
            waitpid(pid, &status, 0);
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }

    result.duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (result.timed_out)
        result.exit_code = -1;
    else if (WIFEXITED(status))
        result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        result.exit_code = 128 + WTERMSIG(status);
    else
        result.exit_code = -1;
    return result;
}

} // namespace ctqa
