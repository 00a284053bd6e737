#pragma once

#include <cstdint>

namespace hkflow {

/// SplitMix64 finalizer (Stafford variant 13).
std::uint64_t mix64(std::uint64_t z) noexcept;

/// Counter-based generator. Draw c of stream s under key k is
///
///     mix64(mix64(k ^ mix64(s + 0x9E3779B97F4A7C15)) + (c + 1) * 0x9E3779B97F4A7C15)
///
/// so any draw can be recomputed from (key, stream, counter) alone and substreams
/// never share state. Uniform reals take the top 53 bits: (u >> 11) * 2^-53.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t stream = 0) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (two uniforms per draw, the sine branch is discarded).
    double normal() noexcept;

    /// Independent generator keyed by this key and a new stream id.
    CounterRng substream(std::uint64_t stream) const noexcept { return CounterRng(key_, stream); }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_, stream_, base_, counter_ = 0;
};

/// Seed of run `run` in a batch seeded with `seed`: mix64(seed ^ mix64(run)).
std::uint64_t run_seed(std::uint64_t seed, std::uint64_t run) noexcept;

} // namespace hkflow
