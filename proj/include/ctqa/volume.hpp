#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctqa/geometry.hpp"

namespace ctqa {

/// Sample type as stored on disk. Internally every volume is held as
/// 64-bit float so degradation math never quantizes mid-pipeline; the
/// stored type is preserved for writing.
enum class SampleType { Int16, UInt16, Float32, Float64 };

const char* sample_type_name(SampleType t);

/// Which NIfTI affine populated the geometry (sform preferred, then qform,
/// then pixdim-only legacy headers). Recorded in run manifests.
enum class AffineSource { Sform, Qform, Legacy };

const char* affine_source_name(AffineSource s);

/// 3D scalar grid in Hounsfield units. Data is row-major over (x,y,z) with
/// x fastest, matching the NIfTI on-disk layout. Immutable by convention
/// once constructed; operations return new volumes.
struct Volume {
    Geometry geom;
    std::vector<double> data;
    SampleType source_dtype = SampleType::Float32;
    AffineSource affine_source = AffineSource::Sform;

    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(g_nx()) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(g_ny()) * static_cast<std::size_t>(z));
    }

    double at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data[index(x, y, z)]; }
    double& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[index(x, y, z)]; }

    std::int64_t g_nx() const { return geom.dims.x; }
    std::int64_t g_ny() const { return geom.dims.y; }
    std::int64_t g_nz() const { return geom.dims.z; }

    double mean() const;
};

inline constexpr std::int64_t kDefaultMinSlices = 16;

/// validate_volume never throws; it reports. A flagged volume is excluded
/// from the run manifest by the pipeline.
struct ValidationReport {
    bool too_few_slices = false;
    bool non_identity_direction = false;
    bool has_non_finite = false;
    std::int64_t non_finite_count = 0;

    bool ok() const { return !too_few_slices && !non_identity_direction && !has_non_finite; }
    std::string summary() const;
};

ValidationReport validate_volume(const Volume& v, std::int64_t min_slices = kDefaultMinSlices);

} // namespace ctqa
