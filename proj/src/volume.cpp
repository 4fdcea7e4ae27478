#include "ctqa/volume.hpp"

#include <cmath>
#include <sstream>

#include "ctqa/csv.hpp"

namespace ctqa {

const char* sample_type_name(SampleType t) {
    switch (t) {
        case SampleType::Int16: return "int16";
        case SampleType::UInt16: return "uint16";
        case SampleType::Float32: return "float32";
        case SampleType::Float64: return "float64";
    }
    return "?";
}

const char* affine_source_name(AffineSource s) {
    switch (s) {
        case AffineSource::Sform: return "sform";
        case AffineSource::Qform: return "qform";
        case AffineSource::Legacy: return "legacy";
    }
    return "?";
}

std::string direction_to_string(const DirectionMatrix& m) {
    std::ostringstream os;
    os << "(";
    for (int r = 0; r < 3; ++r) {
        if (r) os << ";";
        for (int c = 0; c < 3; ++c) {
            if (c) os << ",";
            os << fmt_sig(m[r][c]);
        }
    }
    os << ")";
    return os.str();
}

double Volume::mean() const {
    if (data.empty()) return 0.0;
    double sum = 0.0;
    for (double v : data) sum += v;
    return sum / static_cast<double>(data.size());
}

ValidationReport validate_volume(const Volume& v, std::int64_t min_slices) {
    ValidationReport r;
    r.too_few_slices = v.geom.dims.z < min_slices;
    r.non_identity_direction = !v.geom.direction_is_identity();
    for (double s : v.data) {
        if (!std::isfinite(s)) ++r.non_finite_count;
    }
    r.has_non_finite = r.non_finite_count > 0;
    return r;
}

std::string ValidationReport::summary() const {
    if (ok()) return "ok";
    std::string s;
    auto add = [&s](const char* flag) {
        if (!s.empty()) s += ",";
        s += flag;
    };
    if (too_few_slices) add("too_few_slices");
    if (non_identity_direction) add("non_identity_direction");
    if (has_non_finite) add("non_finite_samples");
    return s;
}

} // namespace ctqa
