#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace slm {

/// Seeded generator. Child streams derived with split() are independent of
/// how many numbers the parent has already produced, so each component
/// (init, data order, masking, dropout) can own its own stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

    Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x9e3779b97f4a7c15ULL))); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller; no cached spare so the state is just
    /// the engine.
    double normal();

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t seed() const { return seed_; }

    std::string save_state() const;
    void load_state(const std::string& state);

    static std::uint64_t mix(std::uint64_t x);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace slm
