#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace ctqa::rng {

/// Philox 4x64 with 10 rounds: a counter-based block cipher RNG. Given the
/// same (counter, key) the block is identical on every platform, so
/// parallel generation reproduces serial output bit-for-bit.
inline std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> ctr,
                                               std::array<std::uint64_t, 2> key) {
    constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ull;
    constexpr std::uint64_t kMul1 = 0xCA5A826395121157ull;
    constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ull;
    constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73Bull;

    for (int round = 0; round < 10; ++round) {
        const unsigned __int128 p0 = static_cast<unsigned __int128>(kMul0) * ctr[0];
        const unsigned __int128 p1 = static_cast<unsigned __int128>(kMul1) * ctr[2];
        const std::uint64_t hi0 = static_cast<std::uint64_t>(p0 >> 64);
        const std::uint64_t lo0 = static_cast<std::uint64_t>(p0);
        const std::uint64_t hi1 = static_cast<std::uint64_t>(p1 >> 64);
        const std::uint64_t lo1 = static_cast<std::uint64_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

/// Derive the per-(case, condition) noise stream seed from the master seed.
/// Distinct (case_id, condition_id) pairs get distinct keys, which is what
/// makes their streams statistically independent.
inline std::uint64_t stream_seed(std::uint64_t master_seed, std::string_view case_id,
                                 std::string_view condition_id) {
    unsigned char seed_bytes[8];
    for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<unsigned char>(master_seed >> (8 * i));
    std::uint64_t h = fnv1a64(seed_bytes, 8);
    h = fnv1a64(case_id, h);
    const unsigned char delim = 0x1f; // keeps ("ab","c") and ("a","bc") distinct
    h = fnv1a64(&delim, 1, h);
    h = fnv1a64(condition_id, h);
    return h;
}

/// Standard normal variates addressable by index: variate i depends only on
/// (stream seed, i), never on generation order. Each Philox block yields
/// four uniforms, turned into four normals by two Box-Muller pairs.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed)
        : key_{seed, 0x3C6EF372FE94F82Bull} {}

    /// Four consecutive normals z[4b], z[4b+1], z[4b+2], z[4b+3].
    std::array<double, 4> block(std::uint64_t b) const {
        const auto words = philox4x64({b, 0, 0, 0}, key_);
        std::array<double, 4> z;
        box_muller(words[0], words[1], z[0], z[1]);
        box_muller(words[2], words[3], z[2], z[3]);
        return z;
    }

    double at(std::uint64_t i) const { return block(i >> 2)[i & 3]; }

private:
    static void box_muller(std::uint64_t a, std::uint64_t b, double& z0, double& z1) {
        // u1 in (0,1] so log(u1) is finite; u2 in [0,1).
        const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        z0 = r * std::cos(t);
        z1 = r * std::sin(t);
    }

    std::array<std::uint64_t, 2> key_;
};

} // namespace ctqa::rng
