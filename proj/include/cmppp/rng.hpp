#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace cmppp {

/// Identifies one reproducible random sequence. Every draw in the toolkit
/// comes from an Rng seeded by an RngStream, so parallel work over
/// sub-streams is independent of scheduling order.
struct RngStream {
    static constexpr const char* kAlgorithmId = "xoshiro256**+splitmix64-v1";

    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    std::string algorithm_id() const { return kAlgorithmId; }
};

/// xoshiro256** generator. The 256-bit state is filled by SplitMix64 run on
/// mix(seed, stream); uniform doubles take the top 53 bits. All derived
/// samplers (normal, Laplace, Poisson, categorical) are implemented here so
/// that value sequences do not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(RngStream s);
    Rng(std::uint64_t seed, std::uint64_t stream) : Rng(RngStream{seed, stream}) {}

    std::uint64_t next_u64();

    /// Uniform on [0, 1).
    double uniform();
    /// Uniform on (0, 1); never returns 0.
    double uniform_open();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    double normal();
    double laplace(double location, double scale);
    double exponential();

    /// Poisson variate. Inversion for mean < 10, PTRS transformed rejection
    /// otherwise.
    std::uint64_t poisson(double mean);
    /// Inversion step with a caller-supplied exp(-mean); used by samplers that
    /// cache it per pixel.
    std::uint64_t poisson_inversion(double mean, double exp_neg_mean);

    /// Index drawn with probability proportional to weights[k].
    std::size_t categorical(std::span<const double> weights);

private:
    std::array<std::uint64_t, 4> s_{};
};

/// SplitMix64 finalizer; exposed for deriving stream ids.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

}  // namespace cmppp
