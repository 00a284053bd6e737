#include "hkflow/rng.hpp"

#include <cmath>
#include <numbers>

namespace hkflow {

namespace {
constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

CounterRng::CounterRng(std::uint64_t key, std::uint64_t stream) noexcept
    : key_(key), stream_(stream), base_(mix64(key ^ mix64(stream + golden))) {}

std::uint64_t CounterRng::next_u64() noexcept {
    ++counter_;
    return mix64(base_ + counter_ * golden);
}

double CounterRng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::normal() noexcept {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t run_seed(std::uint64_t seed, std::uint64_t run) noexcept { return mix64(seed ^ mix64(run)); }

} // namespace hkflow
