#include "cmppp/marks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cmppp {

std::string to_string(ResidualKind kind)
{
    return kind == ResidualKind::Laplace ? "laplace" : "gaussian";
}

ResidualKind residual_kind_from_string(const std::string& name)
{
    if (name == "laplace" || name == "Laplace") return ResidualKind::Laplace;
    if (name == "gaussian" || name == "Gaussian") return ResidualKind::Gaussian;
    throw ValidationError("unknown residual kind '" + name + "' (expected laplace|gaussian)");
}

void ResidualModel::validate() const
{
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("residual scale sigma must be > 0");
}

double ResidualModel::density(double r) const
{
    if (kind == ResidualKind::Laplace) return std::exp(-std::fabs(r) / sigma) / (2.0 * sigma);
    return std::exp(-0.5 * r * r / (sigma * sigma)) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

double ResidualModel::cdf(double r) const
{
    if (kind == ResidualKind::Laplace) {
        const double z = r / sigma;
        return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
    }
    return 0.5 * std::erfc(-r / (sigma * std::numbers::sqrt2));
}

double ResidualModel::sample(double center, Rng& rng) const
{
    if (kind == ResidualKind::Laplace) return rng.laplace(center, sigma);
    return center + sigma * rng.normal();
}

void MarkMaps::check_extent(int h_px, int w_px) const
{
    if (b.h_px() != h_px || b.w_px() != w_px || c.h_px() != h_px || c.w_px() != w_px)
        throw DimensionError("mark maps do not match the intensity grid");
    if (b.channels() != 2) throw DimensionError("size map needs exactly 2 channels");
    if (c.channels() < 1) throw DimensionError("class map needs at least one channel");
}

double log_density(const ResidualModel& model, SizePair observed, SizePair predicted)
{
    model.validate();
    const double rw = observed.w - predicted.w;
    const double rh = observed.h - predicted.h;
    const double s = model.sigma;
    if (model.kind == ResidualKind::Laplace)
        return -2.0 * std::log(2.0 * s) - (std::fabs(rw) + std::fabs(rh)) / s;
    return -std::log(2.0 * std::numbers::pi * s * s) - (rw * rw + rh * rh) / (2.0 * s * s);
}

double tail_mass(const ResidualModel& model, double lower, double predicted_coord)
{
    const double z = (lower - predicted_coord) / model.sigma;
    if (model.kind == ResidualKind::Laplace) return z >= 0.0 ? 0.5 * std::exp(-z) : 1.0 - 0.5 * std::exp(z);
    return 0.5 * std::erfc(z / std::numbers::sqrt2);
}

double class_log_prob(std::span<const double> logits, int class_id)
{
    if (logits.empty()) throw DomainError("class logits must be non-empty");
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= logits.size())
        throw DomainError("class id out of range");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return logits[class_id] - mx - std::log(sum);
}

std::vector<double> softmax(std::span<const double> logits)
{
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - mx);
        sum += p[k];
    }
    for (double& v : p) v /= sum;
    return p;
}

SampledMark sample_mark(const ResidualModel& model, SizePair predicted, std::span<const double> logits,
                        Rng& rng)
{
    model.validate();
    SampledMark m;
    m.w = model.sample(predicted.w, rng);
    m.h = model.sample(predicted.h, rng);
    const auto p = softmax(logits);
    m.class_id = static_cast<int>(rng.categorical(p));
    return m;
}

}  // namespace cmppp
