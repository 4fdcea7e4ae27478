#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "ctqa/errors.hpp"

namespace ctqa {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const Vec3 d = a - b;
    return d.x * d.x + d.y * d.y + d.z * d.z;
}

struct Dims {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;

    bool operator==(const Dims& o) const = default;
    std::int64_t count() const { return x * y * z; }
};

using DirectionMatrix = std::array<std::array<double, 3>, 3>;

constexpr DirectionMatrix kIdentityDirection = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

/// Voxel grid geometry: world = origin + index * spacing, componentwise.
/// Only identity direction cosines are supported by the pipeline; anything
/// else is rejected at load time rather than silently reoriented.
struct Geometry {
    Vec3 origin;
    Vec3 spacing{1.0, 1.0, 1.0};
    Dims dims;
    DirectionMatrix direction = kIdentityDirection;

    bool direction_is_identity(double tol = 1e-6) const {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const double want = (r == c) ? 1.0 : 0.0;
                if (!(std::fabs(direction[r][c] - want) <= tol)) return false;
            }
        return true;
    }

    bool operator==(const Geometry& o) const {
        return origin == o.origin && spacing == o.spacing && dims == o.dims &&
               direction == o.direction;
    }
};

std::string direction_to_string(const DirectionMatrix& m);

inline void require_identity_direction(const Geometry& g) {
    if (!g.direction_is_identity())
        throw data_error("non-identity direction: " + direction_to_string(g.direction));
}

/// Affine transform voxel index (possibly fractional) to world mm.
/// Out-of-bounds indices are permitted.
inline Vec3 voxel_to_world(const Geometry& g, const Vec3& index) {
    require_identity_direction(g);
    return {g.origin.x + index.x * g.spacing.x,
            g.origin.y + index.y * g.spacing.y,
            g.origin.z + index.z * g.spacing.z};
}

inline Vec3 world_to_voxel(const Geometry& g, const Vec3& world) {
    require_identity_direction(g);
    return {(world.x - g.origin.x) / g.spacing.x,
            (world.y - g.origin.y) / g.spacing.y,
            (world.z - g.origin.z) / g.spacing.z};
}

} // namespace ctqa
