#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctqa/volume.hpp"

namespace ctqa {

enum class ConditionKind { Baseline, DoseFraction, SliceThickness };

/// One acquisition condition. DoseFraction carries d in (0,1];
/// SliceThickness carries the target thickness in mm.
struct Condition {
    std::string id;
    ConditionKind kind = ConditionKind::Baseline;
    double dose_fraction = 1.0;
    double thickness_mm = 0.0;

    static Condition baseline(std::string id = "baseline");
    static Condition dose(std::string id, double fraction);
    static Condition thickness(std::string id, double t_mm);
};

/// The five standard conditions, in reporting order: baseline, 25% dose,
/// 50% dose, 3 mm and 5 mm slice thickness.
std::vector<Condition> condition_suite();

/// sigma(d) law. InverseSqrt is sigma_base / sqrt(d); VarianceGap is the
/// alternative sigma_base * sqrt(1/d - 1), which adds nothing at full dose.
enum class NoiseLaw { InverseSqrt, VarianceGap };

const char* noise_law_name(NoiseLaw law);
NoiseLaw noise_law_from_name(const std::string& name);

/// sigma_base_hu is the added-noise standard deviation at dose fraction 1.
/// It is a calibration knob with no claim of scanner fidelity; only the
/// scaling law is physics-guided.
struct NoiseModel {
    double sigma_base_hu = 25.0;
    std::uint64_t seed = 20250116ull;
    NoiseLaw law = NoiseLaw::InverseSqrt;
};

/// Added-noise sigma for a dose fraction in (0,1]. Throws usage_error
/// outside that range.
double dose_noise_sigma(const NoiseModel& m, double dose_fraction);

/// out[i] = v[i] + eps_i with eps_i iid N(0, sigma^2) from the counter-based
/// stream keyed by stream_seed. Deterministic given (seed, dims); sigma 0
/// returns a bit-identical copy. The realized mean shift is checked against
/// the 5*sigma/sqrt(n) zero-mean bound on every application.
Volume add_gaussian_noise(const Volume& v, double sigma_hu, std::uint64_t stream_seed);

struct ThickenResult {
    Volume volume;
    int window_slices = 1;
    double effective_thickness_mm = 0.0;
};

/// Moving average along z with window round-half-even(t_mm / spacing.z),
/// minimum 1. Even windows center with the extra slice trailing; edges
/// replicate so dims and geometry never change. Throws usage_error when
/// t_mm < spacing.z.
ThickenResult thicken_slices(const Volume& v, double t_mm);

/// apply_condition output plus the derived parameters the run manifest
/// records.
struct AppliedCondition {
    Volume volume;
    std::optional<double> sigma_hu;
    std::optional<std::uint64_t> noise_stream_seed;
    std::optional<int> window_slices;
    std::optional<double> effective_thickness_mm;
};

/// Baseline -> identity copy; DoseFraction -> Gaussian noise with the
/// stream seeded from (m.seed, case_id, c.id); SliceThickness -> z moving
/// average. Noise and thickening outputs are stored as float32.
AppliedCondition apply_condition(const Volume& v, const Condition& c, const NoiseModel& m,
                                 const std::string& case_id);

} // namespace ctqa
