#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctqa/annotations.hpp"
#include "ctqa/detections.hpp"
#include "ctqa/volume.hpp"

namespace ctqa {

/// Synthetic CT-like test volume: lung-like background plus spherical
/// Gaussian blobs (sigma = radius/2) at known world positions. Gaussians
/// rather than hard spheres so partial-volume effects have closed forms
/// the tests can check against.
struct PhantomNodule {
    Vec3 center_mm;
    double radius_mm = 4.0;
    double contrast_hu = 400.0;
};

struct PhantomSpec {
    std::string case_id = "phantom";
    Dims dims{64, 64, 48};
    Vec3 spacing{1.0, 1.0, 2.5};
    Vec3 origin{0.0, 0.0, 0.0};
    double background_hu = -850.0;
    double texture_sigma_hu = 0.0;
    std::uint64_t seed = 1;
    std::vector<PhantomNodule> nodules;
};

PhantomSpec load_phantom_spec(const std::filesystem::path& path);
void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path);

/// Build the volume and its ground truth in consensus form (reader_count 4,
/// one nodule per blob). Out-of-bounds centers are rejected; overlapping
/// blobs are allowed.
std::pair<Volume, std::vector<ConsensusNodule>> generate_phantom(const PhantomSpec& spec);

/// Separable Gaussian smoothing with replicate edges; sigma per axis is
/// fwhm_mm / 2.3548 converted to voxels.
Volume gaussian_smooth(const Volume& v, double fwhm_mm);

inline constexpr double kDefaultDetectMinContrastHu = 100.0;
inline constexpr double kDefaultDetectFwhmMm = 2.0;

/// Deterministic contrast-threshold blob detector: smooth, estimate the
/// background as the median, emit one detection per local maximum above
/// background + min_peak_contrast. Confidence is a linear clamp of the
/// excess over the threshold - crude, but monotone in peak contrast, which
/// is all the closed-loop tests need.
std::vector<Detection> synthetic_detect(const Volume& v, const std::string& case_id,
                                        const std::string& condition_id,
                                        double min_peak_contrast_hu = kDefaultDetectMinContrastHu,
                                        double smoothing_fwhm_mm = kDefaultDetectFwhmMm);

/// Mixed-contrast closed-loop cohort: each phantom holds one high-contrast
/// blob (radius 5 mm, 400 HU) the detector always finds, and one
/// low-contrast blob smaller than the slice pitch (radius 2 mm, 300 HU)
/// whose peak falls under the detection threshold once slices are averaged
/// at 5 mm. Centers sit on voxel grid points, far enough apart that
/// matches never cross cohorts.
std::vector<PhantomSpec> default_phantom_suite(int count, std::uint64_t seed);

/// True for the nodules of the high-contrast cohort of default_phantom_suite.
bool is_high_contrast_nodule(const PhantomNodule& n);

} // namespace ctqa
