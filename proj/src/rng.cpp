#include "cmppp/rng.hpp"

#include <cmath>
#include <numbers>

#include "cmppp/core.hpp"

namespace cmppp {

std::uint64_t splitmix64(std::uint64_t& state)
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t s = a;
    const std::uint64_t ha = splitmix64(s);
    s = b ^ 0xD1B54A32D192ED03ULL;
    const std::uint64_t hb = splitmix64(s);
    return ha ^ (hb + 0x9E3779B97F4A7C15ULL + (ha << 6) + (ha >> 2));
}

Rng::Rng(RngStream st)
{
    std::uint64_t state = mix64(st.seed, st.stream);
    for (auto& word : s_) word = splitmix64(state);
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

std::uint64_t Rng::next_u64()
{
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open()
{
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n == 0) throw DomainError("Rng::below(0)");
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal()
{
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::exponential() { return -std::log(uniform_open()); }

double Rng::laplace(double location, double scale)
{
    const double u = uniform_open() - 0.5;
    const double mag = -std::log1p(-2.0 * std::fabs(u));
    return location + (u < 0.0 ? -scale * mag : scale * mag);
}

std::uint64_t Rng::poisson_inversion(double mean, double exp_neg_mean)
{
    const double u = uniform();
    double p = exp_neg_mean;
    double cdf = p;
    std::uint64_t k = 0;
    while (u > cdf) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
        if (p == 0.0 && cdf < u) break;  // rounding tail; u beyond representable cdf
    }
    return k;
}

std::uint64_t Rng::poisson(double mean)
{
    if (!(mean >= 0.0) || !std::isfinite(mean)) throw DomainError("poisson mean must be finite and >= 0");
    if (mean == 0.0) return 0;
    if (mean < 10.0) return poisson_inversion(mean, std::exp(-mean));

    // PTRS, Hoermann (1993).
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = uniform() - 0.5;
        const double v = uniform();
        const double us = 0.5 - std::fabs(u);
        const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(kf);
        if (kf < 0.0 || (us < 0.013 && v > us)) continue;
        const double lhs = std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b);
        const double rhs = -mean + kf * loglam - std::lgamma(kf + 1.0);
        if (lhs <= rhs) return static_cast<std::uint64_t>(kf);
    }
}

std::size_t Rng::categorical(std::span<const double> weights)
{
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw DomainError("categorical weights must have positive sum");
    const double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        acc += weights[k];
        if (u < acc) return k;
    }
    // u landed on the rounding tail; return the last positive weight.
    for (std::size_t k = weights.size(); k-- > 0;)
        if (weights[k] > 0.0) return k;
    return weights.size() - 1;
}

}  // namespace cmppp
