#pragma once

#include <vector>

#include "cmppp/core.hpp"
#include "cmppp/rng.hpp"

namespace cmppp {

/// Grid-discretized Poisson intensity, stored as log-intensity L per pixel
/// with lambda = exp(L). Each pixel carries mass 1/(H*W).
class IntensityField {
public:
    IntensityField() = default;
    /// Takes a single-channel grid of log-intensities.
    explicit IntensityField(Grid log_intensity);
    static IntensityField constant(int h_px, int w_px, double log_intensity);

    const Grid& log_intensity() const { return grid_; }
    int h_px() const { return grid_.h_px(); }
    int w_px() const { return grid_.w_px(); }
    double pixel_mass() const { return grid_.pixel_mass(); }

    double log_lambda(int i, int j) const { return grid_(i, j); }
    double lambda(int i, int j) const;

    /// (1/(H W)) sum exp(L) over all pixels.
    double total_mass() const;

private:
    Grid grid_;
};

/// Lambda(A): pixel mass times the sum of exp(L) over pixels with centers in A.
double integrate(const IntensityField& field, const TestRegion& region);

/// Expected number of points in the unit square.
double expected_count(const IntensityField& field);

/// Number of points of the configuration inside the closed rectangle.
std::size_t count(const MarkedPointConfig& config, const TestRegion& region);

/// exp(-Lambda(A)).
double center_void_probability(const IntensityField& field, const TestRegion& region);

/// Log Radon-Nikodym derivative against the unit-rate homogeneous process:
/// -(total_mass - 1) + sum_l L at pixel_of(point_l).
double log_rn_derivative(const IntensityField& field, const MarkedPointConfig& config);

/// Draws from the discretized process: independent Poisson(lambda/(HW))
/// counts per pixel, placed uniformly in the pixel cell. Marks are zero.
class PoissonSampler {
public:
    explicit PoissonSampler(const IntensityField& field);

    MarkedPointConfig sample(Rng& rng) const;

    /// Per-pixel counts only (row-major); useful for MC over pixel-center
    /// events without materializing coordinates.
    void sample_counts(Rng& rng, std::vector<std::uint32_t>& counts) const;

    int h_px() const { return h_; }
    int w_px() const { return w_; }

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<double> mean_;
    std::vector<double> exp_neg_mean_;
};

MarkedPointConfig sample(const IntensityField& field, Rng& rng);

}  // namespace cmppp
