#include "ctqa/phantom.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "ctqa/csv.hpp"
#include "ctqa/errors.hpp"
#include "ctqa/rng.hpp"

namespace ctqa {

namespace {

using nlohmann::json;

Vec3 vec3_from_json(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.size() != 3) throw usage_error(ctx + ": expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

} // namespace

PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open phantom spec: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw usage_error(path.string() + ": " + e.what());
    }

    PhantomSpec spec;
    spec.case_id = j.value("case_id", spec.case_id);
    if (j.contains("dims")) {
        const auto& d = j["dims"];
        if (!d.is_array() || d.size() != 3) throw usage_error(path.string() + ": dims must be [nx,ny,nz]");
        spec.dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    }
    if (j.contains("spacing")) spec.spacing = vec3_from_json(j["spacing"], "spacing");
    if (j.contains("origin")) spec.origin = vec3_from_json(j["origin"], "origin");
    spec.background_hu = j.value("background_hu", spec.background_hu);
    spec.texture_sigma_hu = j.value("texture_sigma_hu", spec.texture_sigma_hu);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("nodules")) {
        for (const auto& nj : j["nodules"]) {
            PhantomNodule n;
            n.center_mm = vec3_from_json(nj.at("center_mm"), "nodule center_mm");
            n.radius_mm = nj.value("radius_mm", n.radius_mm);
            n.contrast_hu = nj.value("contrast_hu", n.contrast_hu);
            spec.nodules.push_back(n);
        }
    }
    return spec;
}

void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path) {
    json j;
    j["schema_version"] = 1;
    j["case_id"] = spec.case_id;
    j["dims"] = {spec.dims.x, spec.dims.y, spec.dims.z};
    j["spacing"] = {spec.spacing.x, spec.spacing.y, spec.spacing.z};
    j["origin"] = {spec.origin.x, spec.origin.y, spec.origin.z};
    j["background_hu"] = spec.background_hu;
    j["texture_sigma_hu"] = spec.texture_sigma_hu;
    j["seed"] = spec.seed;
    j["nodules"] = json::array();
    for (const auto& n : spec.nodules)
        j["nodules"].push_back({{"center_mm", {n.center_mm.x, n.center_mm.y, n.center_mm.z}},
                                {"radius_mm", n.radius_mm},
                                {"contrast_hu", n.contrast_hu}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write phantom spec: " + path.string());
    out << j.dump(2) << '\n';
}

std::pair<Volume, std::vector<ConsensusNodule>> generate_phantom(const PhantomSpec& spec) {
    if (spec.dims.x < 1 || spec.dims.y < 1 || spec.dims.z < 1)
        throw usage_error("phantom dims must be positive");
    if (!(spec.spacing.x > 0 && spec.spacing.y > 0 && spec.spacing.z > 0))
        throw usage_error("phantom spacing must be positive");

    Geometry g;
    g.dims = spec.dims;
    g.spacing = spec.spacing;
    g.origin = spec.origin;

    const Vec3 upper = voxel_to_world(
        g, {static_cast<double>(g.dims.x - 1), static_cast<double>(g.dims.y - 1),
            static_cast<double>(g.dims.z - 1)});
    for (const auto& n : spec.nodules) {
        if (!(n.radius_mm > 0.0)) throw usage_error("phantom nodule radius must be > 0");
        if (!(n.contrast_hu > 0.0)) throw usage_error("phantom nodule contrast must be > 0");
        if (n.center_mm.x < g.origin.x || n.center_mm.x > upper.x || n.center_mm.y < g.origin.y ||
            n.center_mm.y > upper.y || n.center_mm.z < g.origin.z || n.center_mm.z > upper.z)
            throw usage_error(spec.case_id + ": nodule center (" + fmt_sig(n.center_mm.x) + "," +
                              fmt_sig(n.center_mm.y) + "," + fmt_sig(n.center_mm.z) +
                              ") lies outside the volume");
    }

    Volume v;
    v.geom = g;
    v.source_dtype = SampleType::Float32;
    v.data.assign(static_cast<std::size_t>(g.dims.count()), spec.background_hu);

    for (const auto& n : spec.nodules) {
        const double sigma = n.radius_mm / 2.0;
        const double inv_two_sq = 1.0 / (2.0 * sigma * sigma);
        // Blobs are effectively zero past 6 sigma; only touch that box.
        const Vec3 c_vox = world_to_voxel(g, n.center_mm);
        const double reach = 6.0 * sigma;
        const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c_vox.x - reach / g.spacing.x)));
        const std::int64_t x1 = std::min<std::int64_t>(g.dims.x - 1, static_cast<std::int64_t>(std::ceil(c_vox.x + reach / g.spacing.x)));
        const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c_vox.y - reach / g.spacing.y)));
        const std::int64_t y1 = std::min<std::int64_t>(g.dims.y - 1, static_cast<std::int64_t>(std::ceil(c_vox.y + reach / g.spacing.y)));
        const std::int64_t z0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c_vox.z - reach / g.spacing.z)));
        const std::int64_t z1 = std::min<std::int64_t>(g.dims.z - 1, static_cast<std::int64_t>(std::ceil(c_vox.z + reach / g.spacing.z)));
        for (std::int64_t z = z0; z <= z1; ++z)
            for (std::int64_t y = y0; y <= y1; ++y)
                for (std::int64_t x = x0; x <= x1; ++x) {
                    const Vec3 w = voxel_to_world(g, {static_cast<double>(x),
                                                      static_cast<double>(y),
                                                      static_cast<double>(z)});
                    const double d2 = squared_distance(w, n.center_mm);
                    v.at(x, y, z) += n.contrast_hu * std::exp(-d2 * inv_two_sq);
                }
    }

    if (spec.texture_sigma_hu > 0.0) {
        const rng::GaussianStream stream(rng::stream_seed(spec.seed, spec.case_id, "phantom_texture"));
        const std::size_t count = v.data.size();
        for (std::size_t b = 0; b * 4 < count; ++b) {
            const auto z = stream.block(b);
            const std::size_t base = b * 4;
            const std::size_t m = std::min<std::size_t>(4, count - base);
            for (std::size_t s = 0; s < m; ++s) v.data[base + s] += spec.texture_sigma_hu * z[s];
        }
    }

    std::vector<ConsensusNodule> truth;
    for (const auto& n : spec.nodules) {
        ConsensusNodule cn;
        cn.case_id = spec.case_id;
        cn.centroid_world = n.center_mm;
        cn.reader_count = 4;
        truth.push_back(std::move(cn));
    }
    std::sort(truth.begin(), truth.end(), [](const ConsensusNodule& a, const ConsensusNodule& b) {
        const auto ka = std::make_tuple(a.centroid_world.z, a.centroid_world.y, a.centroid_world.x);
        const auto kb = std::make_tuple(b.centroid_world.z, b.centroid_world.y, b.centroid_world.x);
        return ka < kb;
    });
    return {std::move(v), std::move(truth)};
}

namespace {

// One-axis Gaussian convolution with replicate edges.
void smooth_axis(std::vector<double>& data, const Dims& dims, int axis, double sigma_vox) {
    if (!(sigma_vox > 0.0)) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i / sigma_vox) * (i / sigma_vox));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= ksum;

    const std::int64_t n[3] = {dims.x, dims.y, dims.z};
    const std::int64_t stride[3] = {1, dims.x, dims.x * dims.y};
    const std::int64_t len = n[axis];
    const std::int64_t s = stride[axis];
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;

    std::vector<double> line(static_cast<std::size_t>(len));
    for (std::int64_t i1 = 0; i1 < n[a1]; ++i1)
        for (std::int64_t i2 = 0; i2 < n[a2]; ++i2) {
            const std::int64_t base = i1 * stride[a1] + i2 * stride[a2];
            for (std::int64_t i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = data[static_cast<std::size_t>(base + i * s)];
            for (std::int64_t i = 0; i < len; ++i) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const std::int64_t j = std::clamp<std::int64_t>(i + k, 0, len - 1);
                    acc += kernel[k + radius] * line[static_cast<std::size_t>(j)];
                }
                data[static_cast<std::size_t>(base + i * s)] = acc;
            }
        }
}

} // namespace

Volume gaussian_smooth(const Volume& v, double fwhm_mm) {
    if (!(fwhm_mm > 0.0)) throw usage_error("smoothing FWHM must be > 0");
    constexpr double kFwhmToSigma = 2.354820045;
    const double sigma_mm = fwhm_mm / kFwhmToSigma;
    Volume out = v;
    smooth_axis(out.data, out.geom.dims, 0, sigma_mm / v.geom.spacing.x);
    smooth_axis(out.data, out.geom.dims, 1, sigma_mm / v.geom.spacing.y);
    smooth_axis(out.data, out.geom.dims, 2, sigma_mm / v.geom.spacing.z);
    return out;
}

std::vector<Detection> synthetic_detect(const Volume& v, const std::string& case_id,
                                        const std::string& condition_id,
                                        double min_peak_contrast_hu, double smoothing_fwhm_mm) {
    if (!(min_peak_contrast_hu > 0.0)) throw usage_error("min peak contrast must be > 0");
    const Volume smooth = gaussian_smooth(v, smoothing_fwhm_mm);

    // Background = median of the smoothed volume; nodules occupy a tiny
    // fraction of lung-like phantoms so the median is robust.
    std::vector<double> sorted = smooth.data;
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    const double background = *mid;

    const double floor_value = background + min_peak_contrast_hu;
    const std::int64_t nx = v.geom.dims.x, ny = v.geom.dims.y, nz = v.geom.dims.z;

    std::vector<Detection> out;
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x) {
                const double value = smooth.at(x, y, z);
                if (value < floor_value) continue;
                bool is_peak = true;
                for (std::int64_t dz = -1; dz <= 1 && is_peak; ++dz)
                    for (std::int64_t dy = -1; dy <= 1 && is_peak; ++dy)
                        for (std::int64_t dx = -1; dx <= 1 && is_peak; ++dx) {
                            if (dx == 0 && dy == 0 && dz == 0) continue;
                            const std::int64_t xx = x + dx, yy = y + dy, zz = z + dz;
                            if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz)
                                continue;
                            if (smooth.at(xx, yy, zz) >= value) is_peak = false;
                        }
                if (!is_peak) continue;

                Detection d;
                d.case_id = case_id;
                d.condition_id = condition_id;
                d.position_world = voxel_to_world(v.geom, {static_cast<double>(x),
                                                           static_cast<double>(y),
                                                           static_cast<double>(z)});
                d.confidence = std::clamp(
                    (value - background - min_peak_contrast_hu) / min_peak_contrast_hu, 0.0, 1.0);
                out.push_back(std::move(d));
            }
    sort_detections(out);
    return out;
}

std::vector<PhantomSpec> default_phantom_suite(int count, std::uint64_t seed) {
    if (count < 1) throw usage_error("phantom count must be >= 1");
    std::vector<PhantomSpec> specs;
    specs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        PhantomSpec spec;
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%03d", i);
        spec.case_id = name;
        spec.dims = {64, 64, 48};
        spec.spacing = {1.0, 1.0, 2.5};
        spec.origin = {0.0, 0.0, 0.0};
        spec.background_hu = -850.0;
        spec.texture_sigma_hu = 5.0;
        spec.seed = seed + static_cast<std::uint64_t>(i);

        // Grid-aligned centers, staggered per phantom; the two cohorts sit
        // 60 mm apart in z so 15 mm matching can never cross them.
        const double jx = static_cast<double>(12 + 5 * (i % 8));
        const double jy = static_cast<double>(14 + 4 * (i % 9));
        spec.nodules.push_back({{jx, jy, 12 * 2.5}, 5.0, 400.0});             // high contrast
        spec.nodules.push_back({{63.0 - jx, 63.0 - jy, 36 * 2.5}, 2.0, 300.0}); // sub-slice, low
        specs.push_back(std::move(spec));
    }
    return specs;
}

bool is_high_contrast_nodule(const PhantomNodule& n) { return n.contrast_hu >= 350.0; }

} // namespace ctqa
