#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fewshot {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view text);
/// Stream seed for item `index` of the stream started at `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// mt19937_64 with hand-written distributions, so that sampled values are
/// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    int range(int lo, int hi_inclusive) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1))); }
    bool bernoulli(double p) { return uniform() < p; }
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fewshot
