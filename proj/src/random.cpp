#include "mima/random.hpp"

#include <cmath>
#include <numbers>

namespace mima {

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

namespace {

// 53-bit uniform in the open interval (0, 1).
double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint32_t stream, std::uint64_t step, std::uint32_t replica,
                                   std::uint32_t index) {
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    // stream tag occupies the top byte of the step word
    const std::uint64_t tagged = (step & 0x00FFFFFFFFFFFFFFull) | (static_cast<std::uint64_t>(stream) << 56);
    return philox4x32({replica, index, static_cast<std::uint32_t>(tagged), static_cast<std::uint32_t>(tagged >> 32)}, key);
}

}  // namespace

void CounterRng::normals(std::uint32_t stream, std::uint64_t step, std::uint32_t replica, std::span<double> out) const {
    for (std::size_t k = 0; k < out.size(); k += 2) {
        const auto r = block(seed_, stream, step, replica, static_cast<std::uint32_t>(k / 2) + 1);
        const double u1 = to_open_unit(r[0], r[1]);
        const double u2 = to_open_unit(r[2], r[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        out[k] = radius * std::cos(angle);
        if (k + 1 < out.size()) out[k + 1] = radius * std::sin(angle);
    }
}

double CounterRng::uniform(std::uint32_t stream, std::uint64_t step, std::uint32_t replica) const {
    const auto r = block(seed_, stream, step, replica, 0);
    return to_open_unit(r[0], r[1]);
}

}  // namespace mima
