#include "cmppp/nll.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cmppp {

namespace {

void check_shapes(const IntensityField& field, const MarkMaps& maps)
{
    maps.check_extent(field.h_px(), field.w_px());
}

}  // namespace

CmpppLossBreakdown mean_breakdown(std::span<const CmpppLossBreakdown> items)
{
    CmpppLossBreakdown m;
    if (items.empty()) return m;
    for (const auto& b : items) {
        m.intensity_integral += b.intensity_integral;
        m.center_term += b.center_term;
        m.regression_term += b.regression_term;
        m.classification_term += b.classification_term;
    }
    const double n = static_cast<double>(items.size());
    m.intensity_integral /= n;
    m.center_term /= n;
    m.regression_term /= n;
    m.classification_term /= n;
    m.finalize();
    return m;
}

CmpppLossBreakdown cmppp_nll(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                             const MarkedPointConfig& gt)
{
    check_shapes(field, maps);
    model.validate();
    CmpppLossBreakdown out;
    out.intensity_integral = field.total_mass();
    for (const auto& p : gt.points) {
        const PixelIndex px = pixel_of(p.x, p.y, field.h_px(), field.w_px());
        out.center_term -= field.log_lambda(px.i, px.j);
        out.regression_term -= log_density(model, {p.w, p.h}, maps.size_at(px.i, px.j));
        out.classification_term -= class_log_prob(maps.logits_at(px.i, px.j), p.class_id);
    }
    out.finalize();
    return out;
}

CmpppLossBreakdown nll_with_grad(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                                 const MarkedPointConfig& gt, NllGradients& g)
{
    check_shapes(field, maps);
    model.validate();
    const int H = field.h_px();
    const int W = field.w_px();
    const int C = maps.num_classes();
    g.d_log_intensity = Grid(H, W, 1);
    g.d_b = Grid(H, W, 2);
    g.d_c = Grid(H, W, C);

    CmpppLossBreakdown out;
    const double mass = field.pixel_mass();
    double sum = 0.0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double lam = field.lambda(i, j);
            sum += lam;
            g.d_log_intensity(i, j) = lam * mass;
        }
    out.intensity_integral = sum * mass;

    const double s = model.sigma;
    for (const auto& p : gt.points) {
        const PixelIndex px = pixel_of(p.x, p.y, H, W);
        out.center_term -= field.log_lambda(px.i, px.j);
        g.d_log_intensity(px.i, px.j) -= 1.0;

        const SizePair pred = maps.size_at(px.i, px.j);
        out.regression_term -= log_density(model, {p.w, p.h}, pred);
        const double rw = p.w - pred.w;
        const double rh = p.h - pred.h;
        if (model.kind == ResidualKind::Laplace) {
            // d/dB |o - B| / sigma = -sign(o - B) / sigma, with sign(0) = 0.
            auto sgn = [](double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); };
            g.d_b(px.i, px.j, 0) -= sgn(rw) / s;
            g.d_b(px.i, px.j, 1) -= sgn(rh) / s;
        } else {
            g.d_b(px.i, px.j, 0) -= rw / (s * s);
            g.d_b(px.i, px.j, 1) -= rh / (s * s);
        }

        const auto logits = maps.logits_at(px.i, px.j);
        out.classification_term -= class_log_prob(logits, p.class_id);
        const auto prob = softmax(logits);
        for (int k = 0; k < C; ++k) g.d_c(px.i, px.j, k) += prob[k] - (k == p.class_id ? 1.0 : 0.0);
    }
    out.finalize();
    return out;
}

NllGradients nll_grad(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                      const MarkedPointConfig& gt)
{
    NllGradients g;
    nll_with_grad(field, maps, model, gt, g);
    return g;
}

double estimate_sigma(std::span<const SizePair> residuals, ResidualKind kind, SigmaNormalization norm)
{
    if (residuals.empty()) throw DomainError("estimate_sigma needs at least one residual");
    const double n = static_cast<double>(residuals.size());
    const double denom = norm == SigmaNormalization::MaximumLikelihood ? 2.0 * n : n;
    double acc = 0.0;
    double sigma;
    if (kind == ResidualKind::Laplace) {
        for (const auto& r : residuals) acc += std::fabs(r.w) + std::fabs(r.h);
        sigma = acc / denom;
    } else {
        for (const auto& r : residuals) acc += r.w * r.w + r.h * r.h;
        sigma = std::sqrt(acc / denom);
    }
    if (!std::isfinite(sigma)) throw NumericError("estimate_sigma: non-finite residuals");
    return std::max(sigma, kSigmaFloor);
}

void collect_residuals(const MarkMaps& maps, const MarkedPointConfig& gt, std::vector<SizePair>& out)
{
    for (const auto& p : gt.points) {
        const PixelIndex px = pixel_of(p.x, p.y, maps.b.h_px(), maps.b.w_px());
        const SizePair pred = maps.size_at(px.i, px.j);
        out.push_back({p.w - pred.w, p.h - pred.h});
    }
}

double box_intersection_mass(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                             const TestRegion& region, BoxVoidOptions options)
{
    check_shapes(field, maps);
    model.validate();
    const int H = field.h_px();
    const int W = field.w_px();
    const PixelSpan span = pixels_in(region, H, W);

    // Lower bounds depend on the row (y) or the column (x) only.
    std::vector<double> lower_x(W);
    std::vector<double> lower_y(H);
    for (int j = 0; j < W; ++j) lower_x[j] = 2.0 * std::fabs(region.cx - (j + 0.5) / W) - region.rw;
    for (int i = 0; i < H; ++i) lower_y[i] = 2.0 * std::fabs(region.cy - (i + 0.5) / H) - region.rh;

    double inside = 0.0;
    double outside = 0.0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double lam = field.lambda(i, j);
            if (span.contains(i, j)) {
                inside += lam;
                continue;
            }
            if (lam == 0.0) continue;
            const SizePair b = maps.size_at(i, j);
            outside += lam * tail_mass(model, lower_x[j], b.w) * tail_mass(model, lower_y[i], b.h);
        }
    const double mass = field.pixel_mass();
    return options.include_inside_mass ? inside * mass + outside * mass : outside * mass;
}

double box_void_probability(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                            const TestRegion& region, BoxVoidOptions options)
{
    return std::exp(-box_intersection_mass(field, maps, model, region, options));
}

std::vector<MaskStrip> mask_strips(const Grid& mask)
{
    const int H = mask.h_px();
    const int W = mask.w_px();
    std::vector<MaskStrip> strips;
    int run_start = -1;
    int run_j0 = -1;
    int run_j1 = -1;
    auto flush = [&](int row_end) {
        if (run_start < 0) return;
        strips.push_back({TestRegion::from_corners(static_cast<double>(run_j0) / W,
                                                   static_cast<double>(run_start) / H,
                                                   static_cast<double>(run_j1) / W,
                                                   static_cast<double>(row_end) / H)});
        run_start = -1;
    };
    for (int i = 0; i < H; ++i) {
        int j0 = -1;
        int j1 = -1;
        for (int j = 0; j < W; ++j)
            if (mask(i, j) >= 0.5) {
                if (j0 < 0) j0 = j;
                j1 = j + 1;
            }
        if (j0 < 0) {
            flush(i);
            continue;
        }
        if (run_start >= 0 && (j0 != run_j0 || j1 != run_j1)) flush(i);
        if (run_start < 0) {
            run_start = i;
            run_j0 = j0;
            run_j1 = j1;
        }
    }
    flush(H);
    return strips;
}

double void_probability_general(const IntensityField& field, const MarkMaps& maps, const ResidualModel& model,
                                const Grid& mask)
{
    check_shapes(field, maps);
    model.validate();
    if (!mask.same_extent(field.log_intensity()) || mask.channels() != 1)
        throw DimensionError("pixel mask must be H x W x 1 matching the intensity");
    const int H = field.h_px();
    const int W = field.w_px();
    const auto strips = mask_strips(mask);
    if (strips.empty()) return 1.0;
    const std::size_t S = strips.size();

    struct Bound {
        double ly;
        std::size_t strip;
    };
    std::vector<Bound> order(S);
    std::vector<double> lx(S);

    double inside = 0.0;
    double outside = 0.0;
    for (int i = 0; i < H; ++i) {
        const double yc = (i + 0.5) / H;
        for (std::size_t s = 0; s < S; ++s)
            order[s] = {2.0 * std::fabs(strips[s].rect.cy - yc) - strips[s].rect.rh, s};
        std::sort(order.begin(), order.end(), [](const Bound& a, const Bound& b) {
            return a.ly < b.ly || (a.ly == b.ly && a.strip < b.strip);
        });
        for (int j = 0; j < W; ++j) {
            const double lam = field.lambda(i, j);
            if (mask(i, j) >= 0.5) {
                inside += lam;
                continue;
            }
            if (lam == 0.0) continue;
            const double xc = (j + 0.5) / W;
            const SizePair b = maps.size_at(i, j);
            for (std::size_t s = 0; s < S; ++s) lx[s] = 2.0 * std::fabs(strips[s].rect.cx - xc) - strips[s].rect.rw;
            // Staircase over h: for h in [ly_(k), ly_(k+1)) the first k strips are
            // reachable in y and w must exceed the smallest of their x bounds.
            double hit = 0.0;
            double min_lx = lx[order[0].strip];
            double ty = tail_mass(model, order[0].ly, b.h);
            for (std::size_t k = 0; k < S; ++k) {
                min_lx = std::min(min_lx, lx[order[k].strip]);
                const double ty_next = k + 1 < S ? tail_mass(model, order[k + 1].ly, b.h) : 0.0;
                hit += (ty - ty_next) * tail_mass(model, min_lx, b.w);
                ty = ty_next;
            }
            outside += lam * hit;
        }
    }
    const double mass = field.pixel_mass();
    return std::exp(-(inside * mass + outside * mass));
}

}  // namespace cmppp
