#pragma once

#include <cstdint>
#include <filesystem>

#include "ctqa/volume.hpp"

namespace ctqa {

/// Read a NIfTI-1 volume (.nii or .nii.gz). Supported data types: int16,
/// uint16, float32, float64. scl_slope/scl_inter are applied on load.
/// Byte-swapped (opposite-endian) files are handled transparently.
/// Throws data_error for malformed headers, unsupported datatypes, dims
/// with any axis < 1, or a non-identity direction matrix.
Volume read_volume(const std::filesystem::path& path);

struct WriteStats {
    // Samples clamped to the representable range of an integer dtype.
    std::int64_t clamped_samples = 0;
};

/// Write a NIfTI-1 volume (.nii, or .nii.gz when the path ends in .gz) in
/// the volume's source_dtype. Integer dtypes round half-to-even and clamp;
/// the clamp count is returned. Geometry is stored in both the sform and
/// qform (identity direction) at float32 header precision.
WriteStats write_volume(const Volume& v, const std::filesystem::path& path);

} // namespace ctqa
