#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace r3m {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Folds a list of keys into a seed. Used to give every (run, n, purpose)
/// its own independent stream derived from one 64-bit experiment seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = mix64(seed);
    for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

/// Counter-based generator: the i-th output is mix64(key + i * golden).
/// Streams are split by hashing a key into a fresh stream key, so results
/// do not depend on the order in which streams are consumed.
///
/// All derived distributions are implemented here rather than with
/// <random> so that outputs are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : key_(mix64(seed)) {}

    Rng split(std::uint64_t key) const noexcept { return Rng(derive_seed(key_, {key})); }

    std::uint64_t next_u64() noexcept { return mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound); bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal via Box-Muller (second variate cached).
    double normal() noexcept;

    /// Fisher-Yates over [0, n); returns the first k entries of a uniform
    /// random permutation, i.e. k indices sampled without replacement.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace r3m
