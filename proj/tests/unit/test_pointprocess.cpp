#include <doctest.h>

#include <cmath>

#include "cmppp/pointprocess.hpp"
#include "helpers.hpp"

using namespace cmppp;

TEST_CASE("integrate a constant field")
{
    const auto f = IntensityField::constant(10, 10, std::log(4.0));
    CHECK(expected_count(f) == doctest::Approx(4.0).epsilon(1e-12));
    // Half-domain region holds exactly the left five columns.
    const TestRegion left = TestRegion::from_corners(0.0, 0.0, 0.5, 1.0);
    CHECK(integrate(f, left) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(center_void_probability(f, left) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("integrate matches brute force and is additive")
{
    Rng rng(11, 0);
    const auto f = testutil::random_field(rng, 9, 14, -2.0, 3.0);
    for (int t = 0; t < 100; ++t) {
        const double x0 = rng.uniform(), x1 = rng.uniform(x0, 1.0);
        const double y0 = rng.uniform(), y1 = rng.uniform(y0, 1.0);
        const TestRegion r = TestRegion::from_corners(x0, y0, x1, y1);
        double ref = 0.0;
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 14; ++j)
                if (r.contains((j + 0.5) / 14, (i + 0.5) / 9)) ref += std::exp(f.log_lambda(i, j)) / (9 * 14);
        CHECK(integrate(f, r) == doctest::Approx(ref).epsilon(1e-12));
    }
    // Splitting on a pixel boundary partitions the mass.
    const TestRegion a = TestRegion::from_corners(0.0, 0.0, 0.5, 1.0);
    const TestRegion b = TestRegion::from_corners(0.5 + 1e-9, 0.0, 1.0, 1.0);
    CHECK(integrate(f, a) + integrate(f, b) == doctest::Approx(expected_count(f)).epsilon(1e-12));
}

TEST_CASE("count uses the closed rectangle")
{
    MarkedPointConfig cfg{"c", {{0.2, 0.2, 0, 0, 0}, {0.5, 0.5, 0, 0, 0}, {0.8, 0.8, 0, 0, 0}}};
    CHECK(count(cfg, TestRegion::full_domain()) == 3);
    CHECK(count(cfg, TestRegion::from_corners(0.2, 0.2, 0.5, 0.5)) == 2);
    CHECK(count(cfg, TestRegion::from_corners(0.21, 0.21, 0.49, 0.49)) == 0);
}

TEST_CASE("log_rn_derivative examples")
{
    const auto unit = IntensityField::constant(4, 4, 0.0);
    CHECK(log_rn_derivative(unit, {"e", {}}) == doctest::Approx(0.0));
    CHECK(log_rn_derivative(unit, {"p", {{0.3, 0.3, 0, 0, 0}}}) == doctest::Approx(0.0));

    const auto two = IntensityField::constant(4, 4, std::log(2.0));
    // -(2 - 1) + 3 ln 2
    const MarkedPointConfig three{"t", {{0.1, 0.1, 0, 0, 0}, {0.6, 0.2, 0, 0, 0}, {0.9, 0.9, 0, 0, 0}}};
    CHECK(log_rn_derivative(two, three) == doctest::Approx(-1.0 + 3.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("sampler respects pixel counts and cells")
{
    Grid L(3, 5, 1, -50.0);
    L(1, 3) = std::log(15.0 * 200.0);  // mean 200 points in pixel (1,3)
    const IntensityField f(L);
    Rng rng(2, 0);
    double total = 0;
    for (int t = 0; t < 50; ++t) {
        const auto s = sample(f, rng);
        total += static_cast<double>(s.size());
        for (const auto& p : s.points) {
            CHECK(pixel_of(p.x, p.y, 3, 5) == PixelIndex{1, 3});
            CHECK(p.w == 0.0);
        }
    }
    CHECK(total / 50 == doctest::Approx(200.0).epsilon(0.03));
}

TEST_CASE("sampler is deterministic per stream")
{
    Rng a(5, 9), b(5, 9), c(5, 10);
    const auto f = IntensityField::constant(8, 8, std::log(30.0));
    const auto s1 = sample(f, a);
    const auto s2 = sample(f, b);
    const auto s3 = sample(f, c);
    CHECK(s1 == s2);
    CHECK_FALSE(s1 == s3);
}

TEST_CASE("sample_counts mean and variance per pixel")
{
    Rng rng(7, 1);
    const auto f = testutil::random_field(rng, 4, 4, 2.0, 5.0);
    PoissonSampler ps(f);
    std::vector<std::uint32_t> counts;
    std::vector<double> s1(16, 0.0), s2(16, 0.0);
    const int n = 20000;
    for (int t = 0; t < n; ++t) {
        ps.sample_counts(rng, counts);
        for (int k = 0; k < 16; ++k) {
            s1[k] += counts[k];
            s2[k] += static_cast<double>(counts[k]) * counts[k];
        }
    }
    for (int k = 0; k < 16; ++k) {
        const double mu = std::exp(f.log_lambda(k / 4, k % 4)) / 16;
        const double m = s1[k] / n;
        const double v = s2[k] / n - m * m;
        CHECK(std::fabs(m - mu) < 4.0 * std::sqrt(mu / n));
        CHECK(v == doctest::Approx(mu).epsilon(0.06));
    }
}

TEST_CASE("empty-scene fraction for a tiny intensity")
{
    const auto f = IntensityField::constant(16, 16, std::log(0.01));
    Rng rng(0, 0);
    int empty = 0;
    for (int t = 0; t < 2000; ++t) empty += sample(f, rng).empty();
    CHECK(empty >= 0.99 * 2000 - 10);
}

TEST_CASE("invalid fields are rejected")
{
    Grid L(2, 2, 1, 0.0);
    L(0, 1) = std::nan("");
    CHECK_THROWS_AS(IntensityField{L}, ValidationError);
    CHECK_THROWS(IntensityField{Grid(2, 2, 2)});
}
