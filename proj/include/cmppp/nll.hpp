#pragma once

#include <span>
#include <vector>

#include "cmppp/core.hpp"
#include "cmppp/marks.hpp"
#include "cmppp/pointprocess.hpp"

namespace cmppp {

/// Terms of the marked-PPP negative log-likelihood of one image.
/// total == ((intensity_integral + center_term) + regression_term) + classification_term.
struct CmpppLossBreakdown {
    double intensity_integral = 0.0;  // (1/HW) sum exp(L)
    double center_term = 0.0;         // -sum_i L at gt pixels
    double regression_term = 0.0;     // -sum_i log p_{w,h}
    double classification_term = 0.0; // -sum_i log softmax
    double total = 0.0;

    void finalize() { total = intensity_integral + center_term + regression_term + classification_term; }
};

/// Mean of breakdowns, term by term; total is recomputed from the means.
CmpppLossBreakdown mean_breakdown(std::span<const CmpppLossBreakdown> items);

/// The constant -1 of the log-RN exponent is omitted (it has no gradient).
CmpppLossBreakdown cmppp_nll(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                             const MarkedPointConfig& gt);

struct NllGradients {
    Grid d_log_intensity;  // H x W x 1
    Grid d_b;              // H x W x 2
    Grid d_c;              // H x W x |C|
};

/// Analytic gradient of cmppp_nll().total with respect to every entry of L, B, C.
/// The Laplace subgradient at a zero residual is 0.
NllGradients nll_grad(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                      const MarkedPointConfig& gt);

/// Loss and gradient in one pass.
CmpppLossBreakdown nll_with_grad(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                                 const MarkedPointConfig& gt, NllGradients& grads);

enum class SigmaNormalization {
    MaximumLikelihood,    // 1/(2n): exact maximizer of the bivariate density
    MeanAbsoluteDeviation // 1/n: the unnormalized mean deviation
};

inline constexpr double kSigmaFloor = 1e-6;

/// Closed-form scale estimate from size residuals (observed - predicted).
///   Laplace:  sigma = (1/(2n)) sum |r|_1
///   Gaussian: sigma^2 = (1/(2n)) sum |r|_2^2
/// Floored at kSigmaFloor. Throws DomainError for an empty list.
double estimate_sigma(std::span<const SizePair> residuals, ResidualKind kind,
                      SigmaNormalization norm = SigmaNormalization::MaximumLikelihood);

/// Residuals (gt size - B at pixel_of(gt center)), appended to out.
void collect_residuals(const MarkMaps& maps, const MarkedPointConfig& gt, std::vector<SizePair>& out);

struct BoxVoidOptions {
    /// When false, pixels whose centers lie inside A are left out of the
    /// exponent (integral over the complement of A only).
    bool include_inside_mass = true;
};

/// Exponent of the box-void probability: expected number of marked points
/// whose box meets the rectangle A.
double box_intersection_mass(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                             const TestRegion& region, BoxVoidOptions options = {});

/// P(no box of the process meets A) = exp(-box_intersection_mass).
double box_void_probability(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                            const TestRegion& region, BoxVoidOptions options = {});

/// Void probability for an arbitrary pixel set (mask value >= 0.5). Each mask
/// row is replaced by its bounding column interval; consecutive rows with the
/// same interval form one strip, and the probability that a box centered at
/// an outside pixel reaches any strip is accumulated over the sorted strip
/// lower bounds from the residual tail masses. Rectangular, pixel-aligned
/// masks reproduce box_void_probability.
double void_probability_general(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                                const Grid& pixel_mask);

/// Axis-aligned rectangle of union-of-cells type.
struct MaskStrip {
    TestRegion rect;
};
/// Strip decomposition used by void_probability_general.
std::vector<MaskStrip> mask_strips(const Grid& pixel_mask);

}  // namespace cmppp
