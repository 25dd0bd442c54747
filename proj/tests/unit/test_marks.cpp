#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cmppp/marks.hpp"
#include "helpers.hpp"

using namespace cmppp;

namespace {

const ResidualModel kLaplace1{ResidualKind::Laplace, 1.0};
const ResidualModel kGauss1{ResidualKind::Gaussian, 1.0};

// Composite Simpson on [a, b].
template <class F>
double simpson(F f, double a, double b, int n = 20000)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
    return s * h / 3.0;
}

}  // namespace

TEST_CASE("log_density examples")
{
    CHECK(log_density(kLaplace1, {0.3, 0.4}, {0.3, 0.4}) == doctest::Approx(-2.0 * std::log(2.0)));
    CHECK(log_density(kLaplace1, {1.0, 3.0}, {0.0, 0.0}) == doctest::Approx(-2.0 * std::log(2.0) - 4.0));
    CHECK(log_density(kLaplace1, {-1.0, -3.0}, {0.0, 0.0}) == doctest::Approx(-2.0 * std::log(2.0) - 4.0));
    CHECK(log_density(kGauss1, {0.0, 0.0}, {0.0, 0.0}) == doctest::Approx(-std::log(2.0 * std::numbers::pi)));
    const ResidualModel g2{ResidualKind::Gaussian, 2.0};
    CHECK(log_density(g2, {1.0, 2.0}, {0.0, 0.0}) ==
          doctest::Approx(-std::log(2.0 * std::numbers::pi * 4.0) - 5.0 / 8.0));
    CHECK_THROWS_AS(log_density({ResidualKind::Laplace, 0.0}, {0, 0}, {0, 0}), DomainError);
    CHECK_THROWS_AS(log_density({ResidualKind::Gaussian, -1.0}, {0, 0}, {0, 0}), DomainError);
}

TEST_CASE("densities integrate to one")
{
    for (const auto& m : {ResidualModel{ResidualKind::Laplace, 0.3}, ResidualModel{ResidualKind::Gaussian, 0.7}}) {
        const double I = simpson([&](double r) { return m.density(r); }, -40.0, 40.0, 400000);
        CHECK(std::fabs(I - 1.0) < 1e-6);
    }
}

TEST_CASE("tail_mass examples")
{
    CHECK(tail_mass(kLaplace1, -1e9, 0.0) == 1.0);
    CHECK(tail_mass(kGauss1, -1e9, 0.0) == 1.0);
    CHECK(tail_mass(kLaplace1, 0.0, 0.0) == doctest::Approx(0.5));
    CHECK(tail_mass(kLaplace1, 1.0, 0.0) == doctest::Approx(std::exp(-1.0) / 2.0).epsilon(1e-12));
    CHECK(tail_mass(kGauss1, 0.0, 0.0) == doctest::Approx(0.5));
    CHECK(tail_mass(kGauss1, 1.959963984540054, 0.0) == doctest::Approx(0.025).epsilon(1e-9));
}

TEST_CASE("tail_mass is monotone and complementary")
{
    Rng rng(3, 3);
    for (const auto kind : {ResidualKind::Laplace, ResidualKind::Gaussian}) {
        const ResidualModel m{kind, 0.2};
        double prev = 1.0;
        for (double a = -3.0; a <= 3.0; a += 0.01) {
            const double t = tail_mass(m, a, 0.1);
            CHECK(t <= prev);
            CHECK(t + (1.0 - t) == 1.0);
            CHECK(m.cdf(a - 0.1) == doctest::Approx(1.0 - t).epsilon(1e-12));
            prev = t;
        }
        CHECK(m.cdf(-1e6) == 0.0);
        CHECK(m.cdf(1e6) == 1.0);
    }
}

TEST_CASE("Laplace tail agrees with quadrature")
{
    Rng rng(4, 0);
    for (int t = 0; t < 100; ++t) {
        const double sigma = rng.uniform(0.05, 2.0);
        const double center = rng.uniform(-1.0, 1.0);
        const double lower = rng.uniform(-2.0, 2.0);
        const ResidualModel m{ResidualKind::Laplace, sigma};
        auto dens = [&](double x) { return std::exp(-std::fabs(x - center) / sigma) / (2.0 * sigma); };
        // Split at the kink so Simpson stays accurate.
        double q = 0.0;
        const double far = center + 60.0 * sigma;
        if (lower < center)
            q = simpson(dens, lower, center) + simpson(dens, center, far);
        else
            q = simpson(dens, lower, std::max(far, lower + 60.0 * sigma));
        CHECK(std::fabs(tail_mass(m, lower, center) - q) < 1e-8);
    }
}

TEST_CASE("class_log_prob examples")
{
    const std::vector<double> z{0.0, 0.0};
    CHECK(class_log_prob(z, 0) == doctest::Approx(-std::log(2.0)));
    const std::vector<double> ten{10.0, 0.0};
    CHECK(class_log_prob(ten, 0) == doctest::Approx(-std::log1p(std::exp(-10.0))).epsilon(1e-10));
    CHECK(class_log_prob(ten, 0) == doctest::Approx(-4.54e-5).epsilon(1e-3));
    const std::vector<double> eq(13, 2.5);
    CHECK(class_log_prob(eq, 7) == doctest::Approx(-std::log(13.0)));
    const std::vector<double> huge{1000.0, -1000.0, 0.0};
    CHECK(std::isfinite(class_log_prob(huge, 1)));
    CHECK_THROWS_AS(class_log_prob(z, 2), DomainError);
    CHECK_THROWS_AS(class_log_prob(z, -1), DomainError);
}

TEST_CASE("softmax sums to one")
{
    Rng rng(9, 1);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> l(1 + rng.below(12));
        for (double& v : l) v = 5.0 * rng.normal();
        const auto p = softmax(l);
        double s = 0.0, s2 = 0.0;
        for (std::size_t k = 0; k < l.size(); ++k) {
            s += p[k];
            s2 += std::exp(class_log_prob(l, static_cast<int>(k)));
        }
        CHECK(std::fabs(s - 1.0) < 1e-12);
        CHECK(std::fabs(s2 - 1.0) < 1e-12);
    }
}

TEST_CASE("sample_mark degenerate scale")
{
    Rng rng(1, 1);
    const ResidualModel m{ResidualKind::Laplace, 1e-9};
    const std::vector<double> l{0.0, 0.0};
    for (int t = 0; t < 100; ++t) {
        const auto s = sample_mark(m, {0.2, 0.3}, l, rng);
        CHECK(std::fabs(s.w - 0.2) < 1e-6);
        CHECK(std::fabs(s.h - 0.3) < 1e-6);
    }
}

TEST_CASE("sample_mark median and class frequencies")
{
    Rng rng(2, 2);
    const int n = 100000;
    const std::vector<double> l{0.0, 0.0};
    std::vector<double> w(n);
    int c0 = 0;
    for (int t = 0; t < n; ++t) {
        const auto s = sample_mark(kLaplace1, {0.25, 0.0}, l, rng);
        w[t] = s.w;
        c0 += s.class_id == 0;
    }
    std::nth_element(w.begin(), w.begin() + n / 2, w.end());
    // Median SE for Laplace(b=1) is 1/(2 f(m) sqrt n) = 1/sqrt(n).
    CHECK(std::fabs(w[n / 2] - 0.25) < 4.0 / std::sqrt(n));
    CHECK(std::fabs(c0 / double(n) - 0.5) < 0.01);
}

TEST_CASE("Gaussian sampler moments")
{
    Rng rng(2, 3);
    const ResidualModel m{ResidualKind::Gaussian, 0.5};
    double s1 = 0.0, s2 = 0.0;
    const int n = 100000;
    for (int t = 0; t < n; ++t) {
        const double v = m.sample(1.0, rng);
        s1 += v;
        s2 += v * v;
    }
    const double mean = s1 / n;
    CHECK(std::fabs(mean - 1.0) < 4.0 * 0.5 / std::sqrt(n));
    CHECK(s2 / n - mean * mean == doctest::Approx(0.25).epsilon(0.02));
}

TEST_CASE("residual kind strings")
{
    CHECK(residual_kind_from_string(to_string(ResidualKind::Laplace)) == ResidualKind::Laplace);
    CHECK(residual_kind_from_string(to_string(ResidualKind::Gaussian)) == ResidualKind::Gaussian);
    CHECK_THROWS(residual_kind_from_string("cauchy"));
}
