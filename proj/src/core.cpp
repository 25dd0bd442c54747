#include "cmppp/core.hpp"

#include <cmath>
#include <string>

namespace cmppp {

Grid::Grid(int h_px, int w_px, int channels, double fill)
    : h_(h_px), w_(w_px), c_(channels)
{
    if (h_px <= 0 || w_px <= 0 || channels <= 0)
        throw DimensionError("grid dimensions must be positive");
    values_.assign(static_cast<std::size_t>(h_px) * w_px * channels, fill);
}

Grid::Grid(int h_px, int w_px, int channels, std::vector<double> values)
    : h_(h_px), w_(w_px), c_(channels), values_(std::move(values))
{
    if (h_px <= 0 || w_px <= 0 || channels <= 0)
        throw DimensionError("grid dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(h_px) * w_px * channels)
        throw DimensionError("grid payload does not match H*W*C");
}

Grid Grid::channel(int c) const
{
    if (c < 0 || c >= c_) throw DimensionError("channel index out of range");
    Grid out(h_, w_, 1);
    for (std::size_t p = 0; p < num_pixels(); ++p) out.values_[p] = values_[p * c_ + c];
    return out;
}

void validate_ground_truth(const MarkedPointConfig& cfg, int num_classes)
{
    for (std::size_t k = 0; k < cfg.points.size(); ++k) {
        const auto& p = cfg.points[k];
        const std::string where = cfg.image_id + " point " + std::to_string(k);
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
            throw ValidationError(where + ": center outside [0,1]^2");
        if (!(p.w >= 0.0) || !(p.h >= 0.0))
            throw ValidationError(where + ": negative ground-truth width or height");
        if (!std::isfinite(p.w) || !std::isfinite(p.h))
            throw ValidationError(where + ": non-finite size");
        if (p.class_id < 0 || (num_classes > 0 && p.class_id >= num_classes))
            throw ValidationError(where + ": class id out of range");
    }
}

void validate_region(const TestRegion& r)
{
    if (!std::isfinite(r.cx) || !std::isfinite(r.cy) || !(r.rw > 0.0) || !(r.rh > 0.0))
        throw ValidationError("test region needs finite center and positive size");
    if (r.x1() < 0.0 || r.x0() > 1.0 || r.y1() < 0.0 || r.y0() > 1.0)
        throw ValidationError("test region does not meet the unit square");
}

PixelIndex pixel_of(double x, double y, int h_px, int w_px)
{
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
        throw DomainError("pixel_of: coordinate outside [0,1]");
    int i = static_cast<int>(std::floor(y * h_px));
    int j = static_cast<int>(std::floor(x * w_px));
    if (i > h_px - 1) i = h_px - 1;
    if (j > w_px - 1) j = w_px - 1;
    return {i, j};
}

namespace {

// First and one-past-last index whose center (k+0.5)/n lies in [lo, hi].
std::pair<int, int> center_range(double lo, double hi, int n)
{
    int first = n;
    int last = 0;
    for (int k = 0; k < n; ++k) {
        const double c = (k + 0.5) / n;
        if (c >= lo && c <= hi) {
            if (first == n) first = k;
            last = k + 1;
        }
    }
    if (first == n) return {0, 0};
    return {first, last};
}

}  // namespace

PixelSpan pixels_in(const TestRegion& region, int h_px, int w_px)
{
    auto [i0, i1] = center_range(region.y0(), region.y1(), h_px);
    auto [j0, j1] = center_range(region.x0(), region.x1(), w_px);
    return {i0, i1, j0, j1};
}

}  // namespace cmppp
