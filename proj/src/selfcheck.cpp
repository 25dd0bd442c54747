#include "cmppp/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cmppp/calibrate.hpp"
#include "cmppp/convnet.hpp"
#include "cmppp/nll.hpp"
#include "cmppp/parallel.hpp"
#include "cmppp/pointprocess.hpp"

namespace cmppp {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

IntensityField random_field(Rng& rng, int H, int W, double lo, double hi)
{
    Grid L(H, W, 1);
    for (double& v : L.values()) v = rng.uniform(lo, hi);
    return IntensityField(std::move(L));
}

MarkMaps random_maps(Rng& rng, int H, int W, int C, double size_lo, double size_hi)
{
    MarkMaps m{Grid(H, W, 2), Grid(H, W, C)};
    for (double& v : m.b.values()) v = rng.uniform(size_lo, size_hi);
    for (double& v : m.c.values()) v = rng.normal();
    return m;
}

MarkedPointConfig random_gt(Rng& rng, int n, int C)
{
    MarkedPointConfig cfg;
    for (int k = 0; k < n; ++k)
        cfg.points.push_back(
            {rng.uniform(), rng.uniform(), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), static_cast<int>(rng.below(C))});
    return cfg;
}

CheckResult check_poisson_void(const SelfCheckOptions& o)
{
    const int N = std::max(1000, static_cast<int>(2e4 * o.effort));
    // 8x8 field, the region holds the left half; scale L so that Lambda(A) hits the target.
    std::string detail;
    bool ok = true;
    const TestRegion half = TestRegion::from_corners(0.0, 0.0, 0.5, 1.0);
    for (double target : {0.5, 1.0, 5.0}) {
        const IntensityField f = IntensityField::constant(8, 8, std::log(2.0 * target));
        const PoissonSampler s(f);
        Rng rng(o.seed, static_cast<std::uint64_t>(target * 1000));
        int zeros = 0;
        for (int n = 0; n < N; ++n) zeros += count(s.sample(rng), half) == 0;
        const double p = std::exp(-target);
        const double se = std::sqrt(p * (1 - p) / N);
        const double freq = static_cast<double>(zeros) / N;
        ok &= std::fabs(freq - p) <= 3 * se;
        detail += fmt("L=%.1f: %.4f vs %.4f; ", target, freq, p);
    }
    return {"poisson void law", ok, detail};
}

CheckResult check_rn_identity(const SelfCheckOptions& o)
{
    const int N = std::max(1000, static_cast<int>(2e4 * o.effort));
    Rng frng(o.seed, 11);
    IntensityField f = random_field(frng, 8, 8, -0.5, 0.5);
    // Rescale to total mass 1.5.
    Grid L = f.log_intensity();
    const double shift = std::log(1.5 / f.total_mass());
    for (double& v : L.values()) v += shift;
    f = IntensityField(std::move(L));
    const PoissonSampler ref(IntensityField::constant(8, 8, 0.0));
    Rng rng(o.seed, 12);
    double sum = 0.0;
    for (int n = 0; n < N; ++n) sum += std::exp(log_rn_derivative(f, ref.sample(rng)));
    const double mean = sum / N;
    return {"radon-nikodym identity", std::fabs(mean - 1.0) <= 0.03, fmt("mean %.4f (target 1)", mean)};
}

CheckResult check_nll_gradient(const SelfCheckOptions& o)
{
    Rng rng(o.seed, 21);
    double worst = 0.0;
    for (int inst = 0; inst < 5; ++inst) {
        IntensityField f = random_field(rng, 8, 8, -1, 1);
        MarkMaps m = random_maps(rng, 8, 8, 3, 0.05, 0.3);
        const ResidualModel model{ResidualKind::Gaussian, 0.2};
        const MarkedPointConfig gt = random_gt(rng, 3, 3);
        const NllGradients g = nll_grad(f, m, model, gt);
        auto total = [&](const IntensityField& ff, const MarkMaps& mm) { return cmppp_nll(ff, mm, model, gt).total; };
        const double h = 1e-5;
        auto rel = [](double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-4}); };
        Grid L = f.log_intensity();
        for (std::size_t k = 0; k < L.size(); ++k) {
            Grid a = L, b = L;
            a.values()[k] += h;
            b.values()[k] -= h;
            const double fd = (total(IntensityField(a), m) - total(IntensityField(b), m)) / (2 * h);
            worst = std::max(worst, rel(fd, g.d_log_intensity.values()[k]));
        }
        for (std::size_t k = 0; k < m.b.size(); ++k) {
            MarkMaps a = m, b = m;
            a.b.values()[k] += h;
            b.b.values()[k] -= h;
            worst = std::max(worst, rel((total(f, a) - total(f, b)) / (2 * h), g.d_b.values()[k]));
        }
        for (std::size_t k = 0; k < m.c.size(); ++k) {
            MarkMaps a = m, b = m;
            a.c.values()[k] += h;
            b.c.values()[k] -= h;
            worst = std::max(worst, rel((total(f, a) - total(f, b)) / (2 * h), g.d_c.values()[k]));
        }
    }
    return {"nll gradient (finite differences)", worst <= 1e-5, fmt("max rel err %.2e", worst)};
}

CheckResult check_network_gradient(const SelfCheckOptions& o)
{
    Rng rng(o.seed, 31);
    ConvNetArch arch = ConvNetArch::cmppp(3, 8);
    double worst = 0.0;
    int skipped = 0;
    for (int inst = 0; inst < 3; ++inst) {
        ConvNetParams p = init_params(rng, arch, {3.0, 0.15, 0.15});
        for (double& v : p.values) v += 0.05 * rng.normal();
        Grid x(8, 8, 3);
        for (double& v : x.values()) v = rng.uniform();
        const MarkedPointConfig gt = random_gt(rng, 3, 3);
        const ResidualModel model{ResidualKind::Gaussian, 0.3};
        auto loss = [&](const ConvNetParams& q) {
            const CmpppOutputs out = forward(q, x);
            return cmppp_nll(out.field, out.maps, model, gt).total;
        };
        auto pattern = [&](const ConvNetParams& q) {
            const ForwardTrace t = forward_trace(q, x);
            std::vector<char> s;
            for (const auto& pre : t.pre)
                for (double v : pre.data) s.push_back(v > 0.0);
            return s;
        };
        const CmpppOutputs out = forward(p, x);
        const auto grad = backward(p, x, nll_grad(out.field, out.maps, model, gt));
        const auto base = pattern(p);
        for (int t = 0; t < 60; ++t) {
            const std::size_t k = rng.below(p.values.size());
            double h = 1e-6;
            bool done = false;
            for (int shrink = 0; shrink < 4 && !done; ++shrink, h *= 0.1) {
                ConvNetParams a = p, b = p;
                a.values[k] += h;
                b.values[k] -= h;
                if (pattern(a) != base || pattern(b) != base) continue;
                const double fd = (loss(a) - loss(b)) / (2 * h);
                worst = std::max(worst, std::fabs(fd - grad[k]) / std::max({std::fabs(fd), std::fabs(grad[k]), 1e-4}));
                done = true;
            }
            if (!done) ++skipped;
        }
    }
    return {"network gradient (finite differences)", worst <= 1e-4,
            fmt("max rel err %.2e, %g probes skipped at relu kinks", worst, skipped)};
}

CheckResult check_box_void_mc(const SelfCheckOptions& o)
{
    const int N = std::max(500, static_cast<int>(4000 * o.effort));
    const int scenes = 10;
    int agree = 0;
    std::string detail;
    std::vector<int> ok(scenes, 0);
    parallel_for(scenes, o.threads, [&](std::size_t s) {
        Rng rng(o.seed, 100 + s);
        const int H = 12, W = 12;
        const IntensityField f = random_field(rng, H, W, -0.5, 1.5);
        const MarkMaps m = random_maps(rng, H, W, 2, 0.05, 0.25);
        const ResidualModel model{ResidualKind::Laplace, rng.uniform(0.02, 0.08)};
        const TestRegion A{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)};
        const double p = box_void_probability(f, m, model, A);
        const PoissonSampler sampler(f);
        std::vector<std::uint32_t> counts;
        int free = 0;
        for (int n = 0; n < N; ++n) {
            sampler.sample_counts(rng, counts);
            bool hit = false;
            for (int i = 0; i < H && !hit; ++i)
                for (int j = 0; j < W && !hit; ++j)
                    for (std::uint32_t c = 0; c < counts[static_cast<std::size_t>(i) * W + j] && !hit; ++c) {
                        const double x = (j + 0.5) / W, y = (i + 0.5) / H;
                        const SampledMark mk = sample_mark(model, m.size_at(i, j), m.logits_at(i, j), rng);
                        hit = A.contains(x, y) ||
                              (std::fabs(x - A.cx) <= 0.5 * (A.rw + mk.w) && std::fabs(y - A.cy) <= 0.5 * (A.rh + mk.h));
                    }
            free += !hit;
        }
        const double freq = static_cast<double>(free) / N;
        const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / N);
        ok[s] = std::fabs(freq - p) <= 3 * se + 1e-12;
    });
    for (int v : ok) agree += v;
    // Three-sigma agreement fails about 0.3% of the time per scene.
    return {"box void vs monte carlo", agree >= scenes - 1, fmt("%g of %g scenes within 3 SE", agree, scenes)};
}

CheckResult check_mask_void()
{
    Rng rng(7, 41);
    const int H = 16, W = 16;
    const IntensityField f = random_field(rng, H, W, -1, 1);
    const MarkMaps m = random_maps(rng, H, W, 2, 0.05, 0.3);
    const ResidualModel model{ResidualKind::Laplace, 0.05};
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
        const int i0 = static_cast<int>(rng.below(12)), j0 = static_cast<int>(rng.below(12));
        const int i1 = i0 + 1 + static_cast<int>(rng.below(H - i0)), j1 = j0 + 1 + static_cast<int>(rng.below(W - j0));
        Grid mask(H, W, 1);
        for (int i = i0; i < i1; ++i)
            for (int j = j0; j < j1; ++j) mask(i, j) = 1.0;
        const TestRegion r =
            TestRegion::from_corners(static_cast<double>(j0) / W, static_cast<double>(i0) / H,
                                     static_cast<double>(j1) / W, static_cast<double>(i1) / H);
        const double a = void_probability_general(f, m, model, mask);
        const double b = box_void_probability(f, m, model, r);
        worst = std::max(worst, std::fabs(a - b) / std::max(b, 1e-300));
    }
    return {"mask void equals box void on rectangles", worst <= 1e-12, fmt("max rel diff %.2e", worst)};
}

CheckResult check_area_doubling()
{
    Grid p(16, 16, 1, 0.93);
    const TestRegion a = TestRegion::from_corners(0.0, 0.0, 0.25, 0.25);
    const TestRegion b = TestRegion::from_corners(0.0, 0.0, 0.5, 0.25);
    const double pa = baseline_product_void(p, a), pb = baseline_product_void(p, b);
    return {"pixel product area doubling", std::fabs(pb - pa * pa) <= 1e-15 * pa * pa, fmt("%.17g vs %.17g", pb, pa * pa)};
}

CheckResult check_sigma_optimality(const SelfCheckOptions& o)
{
    Rng rng(o.seed, 51);
    int wins = 0;
    for (int d = 0; d < 5; ++d) {
        const IntensityField f = random_field(rng, 8, 8, -1, 1);
        const MarkMaps m = random_maps(rng, 8, 8, 2, 0.1, 0.3);
        const MarkedPointConfig gt = random_gt(rng, 20, 2);
        std::vector<SizePair> res;
        collect_residuals(m, gt, res);
        const double s = estimate_sigma(res, ResidualKind::Laplace);
        const double best = cmppp_nll(f, m, {ResidualKind::Laplace, s}, gt).total;
        bool beat = true;
        for (int k = -3; k <= 3; ++k)
            if (k != 0) beat &= best < cmppp_nll(f, m, {ResidualKind::Laplace, s * std::ldexp(1.0, k)}, gt).total;
        wins += beat;
    }
    return {"sigma-hat minimizes the loss on a scale grid", wins == 5, fmt("%g of 5 datasets", wins)};
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options)
{
    std::vector<CheckResult> out;
    out.push_back(check_poisson_void(options));
    out.push_back(check_rn_identity(options));
    out.push_back(check_nll_gradient(options));
    out.push_back(check_network_gradient(options));
    out.push_back(check_box_void_mc(options));
    out.push_back(check_mask_void());
    out.push_back(check_area_doubling());
    out.push_back(check_sigma_optimality(options));
    return out;
}

}  // namespace cmppp
