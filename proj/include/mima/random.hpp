#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace mima {

/// Philox4x32-10 block function: 128-bit counter, 64-bit key.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based normal/uniform source. Every draw is addressed by
/// (stream, step, replica, block), so results do not depend on call order
/// or on how replicas are split across threads.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    /// Fills `out` with independent standard normals (Box-Muller).
    void normals(std::uint32_t stream, std::uint64_t step, std::uint32_t replica, std::span<double> out) const;

    /// Uniform in (0, 1).
    [[nodiscard]] double uniform(std::uint32_t stream, std::uint64_t step, std::uint32_t replica) const;

    /// Independent generator for a grid point or sub-run.
    [[nodiscard]] CounterRng substream(std::uint64_t index) const { return CounterRng(splitmix64(seed_ ^ splitmix64(index))); }

private:
    std::uint64_t seed_;
};

namespace streams {
inline constexpr std::uint32_t init = 1;
inline constexpr std::uint32_t propagate = 2;
}  // namespace streams

}  // namespace mima
