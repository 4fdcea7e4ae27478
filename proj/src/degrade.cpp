#include "ctqa/degrade.hpp"

#include <cmath>

#include "ctqa/errors.hpp"
#include "ctqa/rng.hpp"

namespace ctqa {

Condition Condition::baseline(std::string id) {
    Condition c;
    c.id = std::move(id);
    c.kind = ConditionKind::Baseline;
    return c;
}

Condition Condition::dose(std::string id, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw usage_error("dose fraction must be in (0,1], got " + std::to_string(fraction));
    Condition c;
    c.id = std::move(id);
    c.kind = ConditionKind::DoseFraction;
    c.dose_fraction = fraction;
    return c;
}

Condition Condition::thickness(std::string id, double t_mm) {
    if (!(t_mm > 0.0)) throw usage_error("slice thickness must be > 0 mm");
    Condition c;
    c.id = std::move(id);
    c.kind = ConditionKind::SliceThickness;
    c.thickness_mm = t_mm;
    return c;
}

std::vector<Condition> condition_suite() {
    return {Condition::baseline(), Condition::dose("dose_25", 0.25), Condition::dose("dose_50", 0.50),
            Condition::thickness("thick_3mm", 3.0), Condition::thickness("thick_5mm", 5.0)};
}

const char* noise_law_name(NoiseLaw law) {
    return law == NoiseLaw::InverseSqrt ? "inverse-sqrt" : "variance-gap";
}

NoiseLaw noise_law_from_name(const std::string& name) {
    if (name == "inverse-sqrt") return NoiseLaw::InverseSqrt;
    if (name == "variance-gap") return NoiseLaw::VarianceGap;
    throw usage_error("unknown noise law '" + name + "' (expected inverse-sqrt or variance-gap)");
}

double dose_noise_sigma(const NoiseModel& m, double dose_fraction) {
    if (!(dose_fraction > 0.0 && dose_fraction <= 1.0))
        throw usage_error("dose fraction must be in (0,1], got " + std::to_string(dose_fraction));
    if (m.law == NoiseLaw::VarianceGap)
        return m.sigma_base_hu * std::sqrt(1.0 / dose_fraction - 1.0);
    return m.sigma_base_hu / std::sqrt(dose_fraction);
}

Volume add_gaussian_noise(const Volume& v, double sigma_hu, std::uint64_t seed) {
    if (!(sigma_hu >= 0.0)) throw usage_error("noise sigma must be >= 0");
    Volume out = v;
    if (sigma_hu == 0.0 || v.data.empty()) return out;

    const rng::GaussianStream stream(seed);
    const std::size_t n = out.data.size();
    double noise_sum = 0.0;
    for (std::size_t b = 0; b * 4 < n; ++b) {
        const auto z = stream.block(b);
        const std::size_t base = b * 4;
        const std::size_t m = std::min<std::size_t>(4, n - base);
        for (std::size_t s = 0; s < m; ++s) {
            const double eps = sigma_hu * z[s];
            out.data[base + s] += eps;
            noise_sum += eps;
        }
    }

    // Zero-mean contract: the realized mean shift of an honest N(0, sigma^2)
    // stream stays within 5 standard errors. A violation means the stream
    // is broken, not unlucky (p ~ 6e-7).
    const double mean_shift = noise_sum / static_cast<double>(n);
    const double bound = 5.0 * sigma_hu / std::sqrt(static_cast<double>(n));
    if (std::fabs(mean_shift) >= bound)
        throw data_error("noise stream mean drift " + std::to_string(mean_shift) +
                         " HU exceeds zero-mean bound " + std::to_string(bound));

    out.source_dtype = SampleType::Float32;
    return out;
}

ThickenResult thicken_slices(const Volume& v, double t_mm) {
    const double sz = v.geom.spacing.z;
    if (!(t_mm >= sz))
        throw usage_error("target thickness " + std::to_string(t_mm) +
                          " mm is below native slice spacing " + std::to_string(sz) + " mm");

    // Window = round-half-even(t / spacing.z); an even window centers with
    // the extra slice trailing.
    const int w = std::max(1, static_cast<int>(std::nearbyint(t_mm / sz)));
    ThickenResult result;
    result.window_slices = w;
    result.effective_thickness_mm = w * sz;
    result.volume = v;
    if (w == 1) return result;

    const std::int64_t nx = v.geom.dims.x, ny = v.geom.dims.y, nz = v.geom.dims.z;
    const std::int64_t lo = (w - 1) / 2;      // slices before
    const std::int64_t hi = w - 1 - lo;       // slices after
    const std::size_t slice_len = static_cast<std::size_t>(nx * ny);

    Volume& out = result.volume;
    for (std::int64_t k = 0; k < nz; ++k) {
        double* dst = out.data.data() + static_cast<std::size_t>(k) * slice_len;
        for (std::size_t i = 0; i < slice_len; ++i) dst[i] = 0.0;
        for (std::int64_t dk = -lo; dk <= hi; ++dk) {
            const std::int64_t src_k = std::clamp<std::int64_t>(k + dk, 0, nz - 1); // replicate edges
            const double* src = v.data.data() + static_cast<std::size_t>(src_k) * slice_len;
            for (std::size_t i = 0; i < slice_len; ++i) dst[i] += src[i];
        }
        const double inv_w = 1.0 / static_cast<double>(w);
        for (std::size_t i = 0; i < slice_len; ++i) dst[i] *= inv_w;
    }
    out.source_dtype = SampleType::Float32;
    return result;
}

AppliedCondition apply_condition(const Volume& v, const Condition& c, const NoiseModel& m,
                                 const std::string& case_id) {
    AppliedCondition out;
    switch (c.kind) {
        case ConditionKind::Baseline:
            out.volume = v;
            break;
        case ConditionKind::DoseFraction: {
            const double sigma = dose_noise_sigma(m, c.dose_fraction);
            const std::uint64_t seed = rng::stream_seed(m.seed, case_id, c.id);
            out.volume = add_gaussian_noise(v, sigma, seed);
            out.sigma_hu = sigma;
            out.noise_stream_seed = seed;
            break;
        }
        case ConditionKind::SliceThickness: {
            auto r = thicken_slices(v, c.thickness_mm);
            out.volume = std::move(r.volume);
            out.window_slices = r.window_slices;
            out.effective_thickness_mm = r.effective_thickness_mm;
            break;
        }
    }
    return out;
}

} // namespace ctqa
