#pragma once

#include <span>
#include <string>

#include "cmppp/core.hpp"
#include "cmppp/rng.hpp"

namespace cmppp {

enum class ResidualKind { Laplace, Gaussian };

std::string to_string(ResidualKind kind);
ResidualKind residual_kind_from_string(const std::string& name);

/// Residual distribution for (w, h) around the predicted size, with one
/// isotropic scale shared by both coordinates.
struct ResidualModel {
    ResidualKind kind = ResidualKind::Laplace;
    double sigma = 1.0;

    /// Throws DomainError unless sigma > 0 and finite.
    void validate() const;

    /// One-coordinate density, cdf and sampler for residual r = observed - center.
    double density(double r) const;
    double cdf(double r) const;
    double sample(double center, Rng& rng) const;
};

struct SizePair {
    double w = 0.0;
    double h = 0.0;
};

/// Per-pixel mark feature maps: b has channels (w, h); c holds class logits.
struct MarkMaps {
    Grid b;
    Grid c;

    int num_classes() const { return c.channels(); }
    SizePair size_at(int i, int j) const { return {b(i, j, 0), b(i, j, 1)}; }
    std::span<const double> logits_at(int i, int j) const
    {
        return {c.values().data() + c.index(i, j, 0), static_cast<std::size_t>(c.channels())};
    }
    /// Throws DimensionError if b or c disagree with the given extent.
    void check_extent(int h_px, int w_px) const;
};

/// Joint log density of both size coordinates.
///   Laplace:  -2 ln(2 sigma) - |r|_1 / sigma
///   Gaussian: -ln(2 pi sigma^2) - |r|_2^2 / (2 sigma^2)
double log_density(const ResidualModel& model, SizePair observed, SizePair predicted);

/// P(coordinate >= lower) for one coordinate centered at predicted_coord.
double tail_mass(const ResidualModel& model, double lower, double predicted_coord);

/// Stable log-softmax at class_id. Throws DomainError on a bad class id.
double class_log_prob(std::span<const double> logits, int class_id);

/// Softmax probabilities (max-subtracted).
std::vector<double> softmax(std::span<const double> logits);

struct SampledMark {
    double w = 0.0;
    double h = 0.0;
    int class_id = 0;
};

/// Draws (w, h) independently around the prediction and the class from the
/// softmax of the logits. Sizes are not clamped.
SampledMark sample_mark(const ResidualModel& model, SizePair predicted,
                        std::span<const double> logits, Rng& rng);

}  // namespace cmppp
