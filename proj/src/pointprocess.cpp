#include "cmppp/pointprocess.hpp"

#include <cmath>

namespace cmppp {

IntensityField::IntensityField(Grid log_intensity) : grid_(std::move(log_intensity))
{
    if (grid_.channels() != 1) throw DimensionError("intensity field needs a single-channel grid");
    for (double v : grid_.values())
        if (!std::isfinite(v)) throw ValidationError("log-intensity must be finite");
}

IntensityField IntensityField::constant(int h_px, int w_px, double log_intensity)
{
    return IntensityField(Grid(h_px, w_px, 1, log_intensity));
}

double IntensityField::lambda(int i, int j) const { return std::exp(grid_(i, j)); }

double IntensityField::total_mass() const
{
    double sum = 0.0;
    for (double l : grid_.values()) sum += std::exp(l);
    return sum * pixel_mass();
}

double integrate(const IntensityField& field, const TestRegion& region)
{
    const PixelSpan span = pixels_in(region, field.h_px(), field.w_px());
    double sum = 0.0;
    for (int i = span.i0; i < span.i1; ++i)
        for (int j = span.j0; j < span.j1; ++j) sum += field.lambda(i, j);
    return sum * field.pixel_mass();
}

double expected_count(const IntensityField& field) { return field.total_mass(); }

std::size_t count(const MarkedPointConfig& config, const TestRegion& region)
{
    std::size_t n = 0;
    for (const auto& p : config.points)
        if (region.contains(p.x, p.y)) ++n;
    return n;
}

double center_void_probability(const IntensityField& field, const TestRegion& region)
{
    return std::exp(-integrate(field, region));
}

double log_rn_derivative(const IntensityField& field, const MarkedPointConfig& config)
{
    double log_product = 0.0;
    for (const auto& p : config.points) {
        const PixelIndex px = pixel_of(p.x, p.y, field.h_px(), field.w_px());
        log_product += field.log_lambda(px.i, px.j);
    }
    return -(field.total_mass() - 1.0) + log_product;
}

PoissonSampler::PoissonSampler(const IntensityField& field)
    : h_(field.h_px()), w_(field.w_px())
{
    const std::size_t n = static_cast<std::size_t>(h_) * w_;
    mean_.resize(n);
    exp_neg_mean_.resize(n);
    const double mass = field.pixel_mass();
    for (int i = 0; i < h_; ++i)
        for (int j = 0; j < w_; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * w_ + j;
            mean_[k] = field.lambda(i, j) * mass;
            if (!std::isfinite(mean_[k])) throw NumericError("sampler: non-finite pixel intensity");
            exp_neg_mean_[k] = std::exp(-mean_[k]);
        }
}

void PoissonSampler::sample_counts(Rng& rng, std::vector<std::uint32_t>& counts) const
{
    counts.resize(mean_.size());
    for (std::size_t k = 0; k < mean_.size(); ++k) {
        const double m = mean_[k];
        counts[k] = static_cast<std::uint32_t>(m < 10.0 ? rng.poisson_inversion(m, exp_neg_mean_[k])
                                                        : rng.poisson(m));
    }
}

MarkedPointConfig PoissonSampler::sample(Rng& rng) const
{
    MarkedPointConfig cfg;
    for (int i = 0; i < h_; ++i)
        for (int j = 0; j < w_; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * w_ + j;
            const double m = mean_[k];
            const std::uint64_t n = m < 10.0 ? rng.poisson_inversion(m, exp_neg_mean_[k]) : rng.poisson(m);
            for (std::uint64_t r = 0; r < n; ++r) {
                MarkedPoint p;
                p.x = (j + rng.uniform()) / w_;
                p.y = (i + rng.uniform()) / h_;
                cfg.points.push_back(p);
            }
        }
    return cfg;
}

MarkedPointConfig sample(const IntensityField& field, Rng& rng)
{
    return PoissonSampler(field).sample(rng);
}

}  // namespace cmppp
