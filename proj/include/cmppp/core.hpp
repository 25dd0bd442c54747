#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmppp {

// Error taxonomy. The CLI maps NumericError to exit code 3 and every other
// Error to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class DomainError : public Error {
public:
    using Error::Error;
};
class FormatError : public Error {
public:
    using Error::Error;
};
class DimensionError : public Error {
public:
    using Error::Error;
};
class ValidationError : public Error {
public:
    using Error::Error;
};
class NumericError : public Error {
public:
    using Error::Error;
};

/// Object instance: center (x, y) in [0,1]^2 with a (w, h, class) mark.
struct MarkedPoint {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    int class_id = 0;

    friend bool operator==(const MarkedPoint&, const MarkedPoint&) = default;
};

struct MarkedPointConfig {
    std::string image_id;
    std::vector<MarkedPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    friend bool operator==(const MarkedPointConfig&, const MarkedPointConfig&) = default;
};

/// Throws ValidationError if a ground-truth configuration leaves the unit
/// square, carries negative sizes or classes outside [0, num_classes).
/// num_classes <= 0 skips the class check.
void validate_ground_truth(const MarkedPointConfig& cfg, int num_classes = 0);

struct PixelIndex {
    int i = 0;  // row
    int j = 0;  // column

    friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Dense H x W x C field over [0,1]^2, row-major with channels innermost.
/// Pixel (i, j) covers [j/W, (j+1)/W] x [i/H, (i+1)/H].
class Grid {
public:
    Grid() = default;
    Grid(int h_px, int w_px, int channels, double fill = 0.0);
    Grid(int h_px, int w_px, int channels, std::vector<double> values);

    int h_px() const { return h_; }
    int w_px() const { return w_; }
    int channels() const { return c_; }
    std::size_t num_pixels() const { return static_cast<std::size_t>(h_) * w_; }
    std::size_t size() const { return values_.size(); }
    double pixel_mass() const { return 1.0 / (static_cast<double>(h_) * w_); }

    double operator()(int i, int j, int c = 0) const { return values_[index(i, j, c)]; }
    double& operator()(int i, int j, int c = 0) { return values_[index(i, j, c)]; }

    std::size_t index(int i, int j, int c = 0) const
    {
        return (static_cast<std::size_t>(i) * w_ + j) * c_ + c;
    }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    bool same_shape(const Grid& other) const
    {
        return h_ == other.h_ && w_ == other.w_ && c_ == other.c_;
    }
    bool same_extent(const Grid& other) const { return h_ == other.h_ && w_ == other.w_; }

    /// Copies one channel into a single-channel grid.
    Grid channel(int c) const;

    double center_x(int j) const { return (j + 0.5) / w_; }
    double center_y(int i) const { return (i + 0.5) / h_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int h_ = 0;
    int w_ = 0;
    int c_ = 0;
    std::vector<double> values_;
};

/// Axis-aligned rectangle given by center and size, in normalized units.
struct TestRegion {
    double cx = 0.5;
    double cy = 0.5;
    double rw = 1.0;
    double rh = 1.0;

    double x0() const { return cx - 0.5 * rw; }
    double x1() const { return cx + 0.5 * rw; }
    double y0() const { return cy - 0.5 * rh; }
    double y1() const { return cy + 0.5 * rh; }
    double area() const { return rw * rh; }

    /// Closed-rectangle membership.
    bool contains(double x, double y) const
    {
        return x >= x0() && x <= x1() && y >= y0() && y <= y1();
    }

    static TestRegion full_domain() { return {0.5, 0.5, 1.0, 1.0}; }
    static TestRegion from_corners(double x0, double y0, double x1, double y1)
    {
        return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }

    friend bool operator==(const TestRegion&, const TestRegion&) = default;
};

/// Throws ValidationError unless the region has positive area and meets [0,1]^2.
void validate_region(const TestRegion& region);

/// Nearest-pixel lookup. Throws DomainError outside [0,1]^2.
PixelIndex pixel_of(double x, double y, int h_px, int w_px);

inline PixelIndex pixel_of(const MarkedPoint& p, const Grid& grid)
{
    return pixel_of(p.x, p.y, grid.h_px(), grid.w_px());
}

/// Half-open index ranges of the pixels whose centers lie in a closed region.
struct PixelSpan {
    int i0 = 0, i1 = 0;
    int j0 = 0, j1 = 0;

    bool empty() const { return i0 >= i1 || j0 >= j1; }
    bool contains(int i, int j) const { return i >= i0 && i < i1 && j >= j0 && j < j1; }
    std::size_t count() const
    {
        return empty() ? 0 : static_cast<std::size_t>(i1 - i0) * (j1 - j0);
    }
};

/// Pixel-center membership: pixel (i, j) belongs to the region iff
/// ((j+0.5)/W, (i+0.5)/H) lies in the closed rectangle. Centers are monotone
/// in the index, so the member set is always a sub-rectangle of the grid.
PixelSpan pixels_in(const TestRegion& region, int h_px, int w_px);

}  // namespace cmppp
