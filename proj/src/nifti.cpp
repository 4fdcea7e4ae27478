#include "ctqa/nifti.hpp"

#include <zlib.h>

#include <cfenv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "ctqa/errors.hpp"

namespace ctqa {

namespace {

// On-disk NIfTI-1 header, 348 bytes. Only single-file ("n+1") images are
// supported; NIfTI-2 and hdr/img pairs are not.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtUInt16 = 512;

void bswap(std::int16_t& v) {
    auto u = static_cast<std::uint16_t>(v);
    v = static_cast<std::int16_t>(static_cast<std::uint16_t>((u >> 8) | (u << 8)));
}
void bswap(std::int32_t& v) {
    auto u = static_cast<std::uint32_t>(v);
    u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    v = static_cast<std::int32_t>(u);
}
void bswap(float& v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    std::memcpy(&v, &u, 4);
}

void bswap_header(Nifti1Header& h) {
    bswap(h.sizeof_hdr);
    bswap(h.extents);
    bswap(h.session_error);
    for (auto& d : h.dim) bswap(d);
    bswap(h.intent_p1);
    bswap(h.intent_p2);
    bswap(h.intent_p3);
    bswap(h.intent_code);
    bswap(h.datatype);
    bswap(h.bitpix);
    bswap(h.slice_start);
    for (auto& p : h.pixdim) bswap(p);
    bswap(h.vox_offset);
    bswap(h.scl_slope);
    bswap(h.scl_inter);
    bswap(h.slice_end);
    bswap(h.cal_max);
    bswap(h.cal_min);
    bswap(h.slice_duration);
    bswap(h.toffset);
    bswap(h.glmax);
    bswap(h.glmin);
    bswap(h.qform_code);
    bswap(h.sform_code);
    bswap(h.quatern_b);
    bswap(h.quatern_c);
    bswap(h.quatern_d);
    bswap(h.qoffset_x);
    bswap(h.qoffset_y);
    bswap(h.qoffset_z);
    for (auto& s : h.srow_x) bswap(s);
    for (auto& s : h.srow_y) bswap(s);
    for (auto& s : h.srow_z) bswap(s);
}

// gzread handles plain files transparently, so one read path covers
// .nii and .nii.gz.
std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw data_error("no such file: " + path.string());
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw data_error("cannot open: " + path.string());
    gzbuffer(f, 1 << 20);
    std::vector<unsigned char> bytes;
    std::vector<unsigned char> chunk(1 << 20);
    int n;
    while ((n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0)
        bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
    const bool read_error = n < 0;
    gzclose(f);
    if (read_error) throw data_error("read failure (corrupt gzip?): " + path.string());
    return bytes;
}

struct DecodedAffine {
    Vec3 origin;
    Vec3 spacing;
    DirectionMatrix direction;
    AffineSource source;
};

DecodedAffine decode_affine(const Nifti1Header& h, const std::string& name) {
    DecodedAffine a;
    a.direction = kIdentityDirection;
    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int j = 0; j < 3; ++j) {
            const double cx = rows[0][j], cy = rows[1][j], cz = rows[2][j];
            const double len = std::sqrt(cx * cx + cy * cy + cz * cz);
            if (!(len > 0.0) || !std::isfinite(len))
                throw data_error(name + ": degenerate sform column " + std::to_string(j));
            (&a.spacing.x)[j] = len;
            a.direction[0][j] = cx / len;
            a.direction[1][j] = cy / len;
            a.direction[2][j] = cz / len;
        }
        a.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
        a.source = AffineSource::Sform;
    } else if (h.qform_code > 0) {
        const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        const double aa = std::sqrt(std::max(0.0, 1.0 - b * b - c * c - d * d));
        const double qfac = (h.pixdim[0] < 0.0f) ? -1.0 : 1.0;
        DirectionMatrix r = {{{aa * aa + b * b - c * c - d * d, 2 * b * c - 2 * aa * d, 2 * b * d + 2 * aa * c},
                              {2 * b * c + 2 * aa * d, aa * aa + c * c - b * b - d * d, 2 * c * d - 2 * aa * b},
                              {2 * b * d - 2 * aa * c, 2 * c * d + 2 * aa * b, aa * aa + d * d - c * c - b * b}}};
        for (int i = 0; i < 3; ++i) r[i][2] *= qfac;
        a.direction = r;
        a.spacing = {std::fabs(h.pixdim[1]), std::fabs(h.pixdim[2]), std::fabs(h.pixdim[3])};
        a.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
        a.source = AffineSource::Qform;
    } else {
        for (int j = 0; j < 3; ++j) {
            const double p = std::fabs(h.pixdim[1 + j]);
            (&a.spacing.x)[j] = p > 0.0 ? p : 1.0;
        }
        a.origin = {0.0, 0.0, 0.0};
        a.source = AffineSource::Legacy;
    }
    if (!(a.spacing.x > 0 && a.spacing.y > 0 && a.spacing.z > 0) ||
        !std::isfinite(a.spacing.x + a.spacing.y + a.spacing.z))
        throw data_error(name + ": non-positive voxel spacing");
    return a;
}

template <typename T>
double decode_sample(const unsigned char* p, bool swapped) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swapped) {
        if constexpr (sizeof(T) == 2) {
            std::uint16_t u;
            std::memcpy(&u, &v, 2);
            u = static_cast<std::uint16_t>((u >> 8) | (u << 8));
            std::memcpy(&v, &u, 2);
        } else if constexpr (sizeof(T) == 4) {
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
            std::memcpy(&v, &u, 4);
        } else {
            std::uint64_t u;
            std::memcpy(&u, &v, 8);
            u = __builtin_bswap64(u);
            std::memcpy(&v, &u, 8);
        }
    }
    return static_cast<double>(v);
}

template <typename T>
void decode_samples(const unsigned char* p, std::size_t count, bool swapped, double slope,
                    double inter, std::vector<double>& out) {
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        out[i] = decode_sample<T>(p + i * sizeof(T), swapped) * slope + inter;
}

} // namespace

Volume read_volume(const std::filesystem::path& path) {
    const std::string name = path.string();
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < sizeof(Nifti1Header))
        throw data_error(name + ": file shorter than a NIfTI-1 header");

    Nifti1Header h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        bswap_header(h);
        swapped = true;
        if (h.sizeof_hdr != 348) throw data_error(name + ": malformed header (sizeof_hdr)");
    }

    if (std::memcmp(h.magic, "ni1", 3) == 0)
        throw data_error(name + ": two-file NIfTI (ni1) is not supported");
    if (std::memcmp(h.magic, "n+1", 3) != 0 || h.magic[3] != '\0')
        throw data_error(name + ": missing NIfTI-1 magic");

    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 7) throw data_error(name + ": not a 3D image (dim[0]=" + std::to_string(ndim) + ")");
    for (int i = ndim + 1; i <= 7; ++i)
        if (h.dim[i] > 1) throw data_error(name + ": malformed header (dim past dim[0])");
    for (int i = 4; i <= ndim; ++i)
        if (h.dim[i] > 1)
            throw data_error(name + ": only 3D images (or singleton higher dims) are supported");
    if (h.dim[1] < 1 || h.dim[2] < 1 || h.dim[3] < 1)
        throw data_error(name + ": dims with an axis < 1");

    SampleType dtype;
    std::size_t sample_size;
    switch (h.datatype) {
        case kDtInt16: dtype = SampleType::Int16; sample_size = 2; break;
        case kDtUInt16: dtype = SampleType::UInt16; sample_size = 2; break;
        case kDtFloat32: dtype = SampleType::Float32; sample_size = 4; break;
        case kDtFloat64: dtype = SampleType::Float64; sample_size = 8; break;
        default:
            throw data_error(name + ": unsupported datatype code " + std::to_string(h.datatype));
    }

    const auto affine = decode_affine(h, name);

    Volume v;
    v.geom.dims = {h.dim[1], h.dim[2], h.dim[3]};
    v.geom.origin = affine.origin;
    v.geom.spacing = affine.spacing;
    v.geom.direction = affine.direction;
    v.source_dtype = dtype;
    v.affine_source = affine.source;

    if (!v.geom.direction_is_identity())
        throw data_error(name + ": non-identity direction: " + direction_to_string(v.geom.direction));

    if (!std::isfinite(h.vox_offset) || h.vox_offset < 348.0f)
        throw data_error(name + ": malformed header (vox_offset)");
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    const auto count = static_cast<std::size_t>(v.geom.dims.count());
    if (bytes.size() < offset + count * sample_size)
        throw data_error(name + ": truncated image data");

    double slope = h.scl_slope, inter = h.scl_inter;
    if (!std::isfinite(slope) || !std::isfinite(inter))
        throw data_error(name + ": malformed header (scl_slope/scl_inter)");
    if (slope == 0.0) {
        slope = 1.0;
        inter = 0.0;
    }

    const unsigned char* p = bytes.data() + offset;
    switch (dtype) {
        case SampleType::Int16: decode_samples<std::int16_t>(p, count, swapped, slope, inter, v.data); break;
        case SampleType::UInt16: decode_samples<std::uint16_t>(p, count, swapped, slope, inter, v.data); break;
        case SampleType::Float32: decode_samples<float>(p, count, swapped, slope, inter, v.data); break;
        case SampleType::Float64: decode_samples<double>(p, count, swapped, slope, inter, v.data); break;
    }
    return v;
}

namespace {

template <typename T>
std::int64_t encode_integer_samples(const std::vector<double>& data, std::vector<unsigned char>& out,
                                    const std::string& name) {
    std::int64_t clamped = 0;
    const double lo = static_cast<double>(std::numeric_limits<T>::min());
    const double hi = static_cast<double>(std::numeric_limits<T>::max());
    out.resize(data.size() * sizeof(T));
    auto* dst = reinterpret_cast<T*>(out.data());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = data[i];
        if (!std::isfinite(v))
            throw data_error(name + ": non-finite sample cannot be written as integer dtype");
        double r = std::nearbyint(v); // default rounding: half to even
        if (r < lo) {
            r = lo;
            ++clamped;
        } else if (r > hi) {
            r = hi;
            ++clamped;
        }
        dst[i] = static_cast<T>(r);
    }
    return clamped;
}

} // namespace

WriteStats write_volume(const Volume& v, const std::filesystem::path& path) {
    const std::string name = path.string();
    if (v.geom.dims.x < 1 || v.geom.dims.y < 1 || v.geom.dims.z < 1)
        throw data_error(name + ": dims with an axis < 1");
    if (v.geom.dims.x > 32767 || v.geom.dims.y > 32767 || v.geom.dims.z > 32767)
        throw data_error(name + ": axis too large for NIfTI-1 (max 32767)");
    if (static_cast<std::size_t>(v.geom.dims.count()) != v.data.size())
        throw data_error(name + ": data length does not match dims");
    if (!v.geom.direction_is_identity())
        throw data_error(name + ": non-identity direction: " + direction_to_string(v.geom.direction));

    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(v.geom.dims.x);
    h.dim[2] = static_cast<std::int16_t>(v.geom.dims.y);
    h.dim[3] = static_cast<std::int16_t>(v.geom.dims.z);
    for (int i = 4; i <= 7; ++i) h.dim[i] = 1;
    h.pixdim[0] = 1.0f; // qfac
    h.pixdim[1] = static_cast<float>(v.geom.spacing.x);
    h.pixdim[2] = static_cast<float>(v.geom.spacing.y);
    h.pixdim[3] = static_cast<float>(v.geom.spacing.z);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2; // mm
    std::snprintf(h.descrip, sizeof(h.descrip), "%s", "ctqa");
    h.qform_code = 1;
    h.sform_code = 1;
    h.quatern_b = h.quatern_c = h.quatern_d = 0.0f; // identity rotation
    h.qoffset_x = static_cast<float>(v.geom.origin.x);
    h.qoffset_y = static_cast<float>(v.geom.origin.y);
    h.qoffset_z = static_cast<float>(v.geom.origin.z);
    h.srow_x[0] = h.pixdim[1];
    h.srow_y[1] = h.pixdim[2];
    h.srow_z[2] = h.pixdim[3];
    h.srow_x[3] = h.qoffset_x;
    h.srow_y[3] = h.qoffset_y;
    h.srow_z[3] = h.qoffset_z;
    std::memcpy(h.magic, "n+1", 4);

    WriteStats stats;
    std::vector<unsigned char> samples;
    switch (v.source_dtype) {
        case SampleType::Int16:
            h.datatype = kDtInt16;
            h.bitpix = 16;
            stats.clamped_samples = encode_integer_samples<std::int16_t>(v.data, samples, name);
            break;
        case SampleType::UInt16:
            h.datatype = kDtUInt16;
            h.bitpix = 16;
            stats.clamped_samples = encode_integer_samples<std::uint16_t>(v.data, samples, name);
            break;
        case SampleType::Float32: {
            h.datatype = kDtFloat32;
            h.bitpix = 32;
            samples.resize(v.data.size() * 4);
            auto* dst = reinterpret_cast<float*>(samples.data());
            for (std::size_t i = 0; i < v.data.size(); ++i) dst[i] = static_cast<float>(v.data[i]);
            break;
        }
        case SampleType::Float64: {
            h.datatype = kDtFloat64;
            h.bitpix = 64;
            samples.resize(v.data.size() * 8);
            std::memcpy(samples.data(), v.data.data(), samples.size());
            break;
        }
    }
    if (stats.clamped_samples > 0)
        std::fprintf(stderr, "warning: %s: %lld sample(s) clamped to %s range\n", name.c_str(),
                     static_cast<long long>(stats.clamped_samples), sample_type_name(v.source_dtype));

    std::vector<unsigned char> blob(352, 0);
    std::memcpy(blob.data(), &h, sizeof(h));
    blob.insert(blob.end(), samples.begin(), samples.end());

    if (path.extension() == ".gz") {
        gzFile f = gzopen(name.c_str(), "wb");
        if (!f) throw data_error(name + ": cannot open for writing");
        gzbuffer(f, 1 << 20);
        const auto written = gzwrite(f, blob.data(), static_cast<unsigned>(blob.size()));
        const int rc = gzclose(f);
        if (written != static_cast<int>(blob.size()) || rc != Z_OK)
            throw data_error(name + ": write failure");
    } else {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw data_error(name + ": cannot open for writing");
        f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
        if (!f) throw data_error(name + ": write failure");
    }
    return stats;
}

} // namespace ctqa
