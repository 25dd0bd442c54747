#include "cmppp/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cmppp/nll.hpp"
#include "cmppp/parallel.hpp"
#include "cmppp/train.hpp"

namespace cmppp {

ReliabilityReport reliability(std::span<const CalibrationRecord> records, int num_bins)
{
    if (num_bins < 1) throw ValidationError("need at least one ECE bin");
    ReliabilityReport r;
    r.bins.resize(static_cast<std::size_t>(num_bins));
    std::vector<double> conf_sum(r.bins.size(), 0.0), pos(r.bins.size(), 0.0);
    for (std::size_t b = 0; b < r.bins.size(); ++b) {
        r.bins[b].lo = static_cast<double>(b) / num_bins;
        r.bins[b].hi = static_cast<double>(b + 1) / num_bins;
    }
    for (const auto& rec : records) {
        if (!std::isfinite(rec.confidence) || rec.confidence < 0.0 || rec.confidence > 1.0)
            throw DomainError("calibration confidence outside [0, 1]");
        const auto b = std::min(static_cast<std::size_t>(rec.confidence * num_bins), r.bins.size() - 1);
        conf_sum[b] += rec.confidence;
        pos[b] += rec.outcome;
        ++r.bins[b].count;
    }
    r.total = records.size();
    for (std::size_t b = 0; b < r.bins.size(); ++b) {
        auto& bin = r.bins[b];
        if (bin.count == 0) continue;
        const double n = static_cast<double>(bin.count);
        bin.mean_confidence = conf_sum[b] / n;
        bin.frequency = pos[b] / n;
        r.ece += n / static_cast<double>(r.total) * std::fabs(bin.frequency - bin.mean_confidence);
    }
    return r;
}

OrderedJson ReliabilityReport::to_json() const
{
    OrderedJson j;
    j["binning"] = "equal-width";
    j["num_bins"] = bins.size();
    j["total"] = total;
    j["ece"] = ece;
    OrderedJson arr = OrderedJson::array();
    for (const auto& b : bins) {
        OrderedJson e;
        e["lo"] = b.lo;
        e["hi"] = b.hi;
        e["mean_confidence"] = b.mean_confidence;
        e["frequency"] = b.frequency;
        e["count"] = b.count;
        arr.push_back(e);
    }
    j["bins"] = arr;
    return j;
}

std::string ReliabilityReport::to_csv() const
{
    std::string out = "bin,lo,hi,mean_confidence,frequency,count\n";
    char buf[160];
    for (std::size_t b = 0; b < bins.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%zu,%.3f,%.3f,%.10f,%.10f,%zu\n", b, bins[b].lo, bins[b].hi,
                      bins[b].mean_confidence, bins[b].frequency, bins[b].count);
        out += buf;
    }
    return out;
}

std::vector<TestRegion> sample_test_boxes(Rng& rng, double area_frac, int k, int h_px, int w_px, double max_aspect)
{
    if (!(area_frac > 0.0) || !(area_frac < 1.0)) throw ValidationError("area fraction must be in (0, 1)");
    if (k < 0) throw ValidationError("box count must be >= 0");
    if (!(max_aspect >= 1.0)) throw ValidationError("max aspect must be >= 1");
    // In pixel units the aspect is q = (rw W) / (rh H); rw rh = a gives
    // rw = sqrt(a q H / W), rh = sqrt(a W / (q H)). Both sides <= 1 needs
    // q in [a H / W, W / (a H)].
    const double ratio = static_cast<double>(h_px) / w_px;
    const double q_lo = area_frac * ratio;
    const double q_hi = 1.0 / (area_frac * ratio);
    const double lmax = std::log(max_aspect);
    std::vector<TestRegion> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int n = 0; n < k; ++n) {
        const double q = std::clamp(std::exp(rng.uniform(-lmax, lmax)), q_lo, q_hi);
        const double rw = std::min(1.0, std::sqrt(area_frac * q * ratio));
        const double rh = area_frac / rw;
        if (rh > 1.0) throw DomainError("cannot place a test box of this area");
        const double cx = rng.uniform(0.5 * rw, 1.0 - 0.5 * rw);
        const double cy = rng.uniform(0.5 * rh, 1.0 - 0.5 * rh);
        out.push_back({cx, cy, rw, rh});
    }
    return out;
}

int drivable_center(const MarkedPointConfig& gt, const TestRegion& region) { return count(gt, region) == 0 ? 1 : 0; }

int drivable_box(const MarkedPointConfig& gt, const TestRegion& region)
{
    for (const auto& p : gt.points) {
        const double ox = std::min(p.x + 0.5 * p.w, region.x1()) - std::max(p.x - 0.5 * p.w, region.x0());
        const double oy = std::min(p.y + 0.5 * p.h, region.y1()) - std::max(p.y - 0.5 * p.h, region.y0());
        if (ox > 0.0 && oy > 0.0) return 0;
    }
    return 1;
}

int drivable_pixels(const MarkedPointConfig& gt, const TestRegion& region, int h_px, int w_px)
{
    const PixelSpan a = pixels_in(region, h_px, w_px);
    if (a.empty()) return 1;
    for (const auto& p : gt.points) {
        if (!(p.w > 0.0) || !(p.h > 0.0)) continue;
        const PixelSpan b = pixels_in({p.x, p.y, p.w, p.h}, h_px, w_px);
        if (std::max(a.i0, b.i0) < std::min(a.i1, b.i1) && std::max(a.j0, b.j0) < std::min(a.j1, b.j1)) return 0;
    }
    return 1;
}

double baseline_product_void(const Grid& free_probs, const TestRegion& region)
{
    if (free_probs.channels() != 1) throw DimensionError("pixel probabilities must be single-channel");
    const PixelSpan s = pixels_in(region, free_probs.h_px(), free_probs.w_px());
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(std::max(0, s.i1 - s.i0)) * std::max(0, s.j1 - s.j0));
    for (int i = s.i0; i < s.i1; ++i)
        for (int j = s.j0; j < s.j1; ++j) v.push_back(free_probs(i, j));
    // Balanced halving: for equal values the product over 2m pixels is then
    // exactly the square of the product over m.
    auto prod = [&](auto&& self, std::size_t lo, std::size_t hi) -> double {
        if (hi - lo == 0) return 1.0;
        if (hi - lo == 1) return v[lo];
        const std::size_t mid = lo + (hi - lo) / 2;
        return self(self, lo, mid) * self(self, mid, hi);
    };
    return prod(prod, 0, v.size());
}

std::string to_string(CalibrationMode m) { return m == CalibrationMode::Center ? "center" : "box"; }

CalibrationMode calibration_mode_from_string(const std::string& s)
{
    if (s == "center") return CalibrationMode::Center;
    if (s == "box") return CalibrationMode::Box;
    throw ValidationError("unknown calibration mode '" + s + "' (expected center|box)");
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double logit_clamped(double p)
{
    const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return std::clamp(std::log(q) - std::log1p(-q), -13.8, 13.8);
}

Grid occupancy_free_probs(const Checkpoint& ckpt, const Grid& input)
{
    if (ckpt.model_type != ModelType::Occupancy) throw ValidationError("expected an occupancy checkpoint");
    const Grid z = forward_raw(ckpt.params, input).to_grid();
    Grid p(z.h_px(), z.w_px(), 1);
    for (std::size_t k = 0; k < z.size(); ++k) p.values()[k] = sigmoid(-z.values()[k]);
    return p;
}

CalibrationResult calibrate_ppp(const VoidSource& source, const Dataset& data, const CalibrationOptions& opt,
                                int threads)
{
    if (data.empty()) throw ValidationError("calibration dataset has no images");
    if (source.kind != VoidSource::Kind::True && !source.checkpoint)
        throw ValidationError("checkpoint source without a checkpoint");
    if (source.kind == VoidSource::Kind::Checkpoint && source.checkpoint->model_type != ModelType::Cmppp)
        throw ValidationError("checkpoint source needs a CMPPP model");
    ResidualModel residual;
    if (source.kind == VoidSource::Kind::True) {
        const auto r = source.true_residual ? source.true_residual : data.true_residual;
        if (opt.mode == CalibrationMode::Box && !r)
            throw ValidationError("box mode with the true source needs the dataset's residual model");
        if (r) residual = *r;
    } else if (source.kind == VoidSource::Kind::Checkpoint) {
        residual = source.checkpoint->residual;
    }
    const BoxVoidOptions bopt{!opt.literal_box_void};

    std::vector<std::vector<CalibrationRecord>> per(data.size());
    parallel_for(data.size(), threads, [&](std::size_t k) {
        const DatasetItem& it = data.items[k];
        const int H = it.input.h_px();
        const int W = it.input.w_px();
        Rng rng(opt.seed, k);
        const auto boxes = sample_test_boxes(rng, opt.area_frac, opt.boxes_per_image, H, W);
        auto& out = per[k];
        out.reserve(boxes.size());
        if (source.kind == VoidSource::Kind::Occupancy) {
            const Grid free = occupancy_free_probs(*source.checkpoint, it.input);
            for (const auto& b : boxes)
                out.push_back({baseline_product_void(free, b), drivable_pixels(it.gt, b, H, W), it.id, b});
            return;
        }
        IntensityField field;
        MarkMaps maps;
        if (source.kind == VoidSource::Kind::True) {
            if (!it.true_field) throw ValidationError("image " + it.id + " has no stored true intensity");
            field = *it.true_field;
            if (opt.mode == CalibrationMode::Box) {
                if (!it.true_maps) throw ValidationError("image " + it.id + " has no stored true marks");
                maps = *it.true_maps;
            }
        } else {
            CmpppOutputs o = forward(source.checkpoint->params, it.input);
            field = std::move(o.field);
            maps = std::move(o.maps);
        }
        for (const auto& b : boxes) {
            if (opt.mode == CalibrationMode::Center)
                out.push_back({center_void_probability(field, b), drivable_center(it.gt, b), it.id, b});
            else
                out.push_back({box_void_probability(field, maps, residual, b, bopt), drivable_box(it.gt, b), it.id, b});
        }
    });
    CalibrationResult res;
    for (auto& v : per)
        for (auto& r : v) res.records.push_back(std::move(r));
    res.report = reliability(res.records, opt.num_bins);
    return res;
}

namespace {

double bce(double p, int y)
{
    constexpr double eps = 1e-15;
    return y ? -std::log(std::max(p, eps)) : -std::log(std::max(1.0 - p, eps));
}

void check_both_outcomes(std::span<const CalibrationRecord> records)
{
    bool has0 = false, has1 = false;
    for (const auto& r : records) (r.outcome ? has1 : has0) = true;
    if (records.size() < 2 || !has0 || !has1)
        throw ValidationError("recalibration needs at least two records with both outcomes present");
}

}  // namespace

double apply_temperature(double conf, double T) { return T == 1.0 ? conf : sigmoid(logit_clamped(conf) / T); }

double apply_platt(double conf, const PlattParams& p) { return sigmoid(p.a * logit_clamped(conf) + p.b); }

double fit_temperature(std::span<const CalibrationRecord> records)
{
    check_both_outcomes(records);
    std::vector<double> z(records.size());
    for (std::size_t k = 0; k < records.size(); ++k) z[k] = logit_clamped(records[k].confidence);
    auto loss = [&](double T) {
        double s = 0.0;
        for (std::size_t k = 0; k < records.size(); ++k) s += bce(sigmoid(z[k] / T), records[k].outcome);
        return s;
    };
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = 0.05, b = 20.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = loss(c), fd = loss(d);
    for (int it = 0; it < 200 && b - a > 1e-9; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = loss(d);
        }
    }
    return 0.5 * (a + b);
}

PlattParams fit_platt(std::span<const CalibrationRecord> records)
{
    check_both_outcomes(records);
    std::vector<double> z(records.size());
    for (std::size_t k = 0; k < records.size(); ++k) z[k] = logit_clamped(records[k].confidence);
    auto loss = [&](const PlattParams& p) {
        double s = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            // Cross-entropy on the logit scale, stable for large |u|.
            const double u = p.a * z[k] + p.b;
            s += std::max(u, 0.0) + std::log1p(std::exp(-std::fabs(u))) - records[k].outcome * u;
        }
        return s;
    };
    PlattParams p;
    double f = loss(p);
    double damping = 1e-6;
    for (int it = 0; it < 100; ++it) {
        double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double s = sigmoid(p.a * z[k] + p.b);
            const double r = s - records[k].outcome;
            const double w = s * (1.0 - s);
            ga += r * z[k];
            gb += r;
            haa += w * z[k] * z[k];
            hab += w * z[k];
            hbb += w;
        }
        if (std::fabs(ga) + std::fabs(gb) < 1e-10 * static_cast<double>(z.size())) break;
        bool improved = false;
        for (int tries = 0; tries < 60; ++tries) {
            const double A = haa + damping, B = hab, D = hbb + damping;
            const double det = A * D - B * B;
            if (!(det > 0.0)) {
                damping = std::max(damping * 10.0, 1e-6);
                continue;
            }
            const PlattParams q{p.a - (D * ga - B * gb) / det, p.b - (A * gb - B * ga) / det};
            const double fq = loss(q);
            if (fq <= f) {
                improved = fq < f;
                p = q;
                f = fq;
                damping = std::max(damping * 0.1, 1e-12);
                break;
            }
            damping = std::max(damping * 10.0, 1e-6);
        }
        if (!improved) break;
    }
    return p;
}

Recalibration recalibration_from_string(const std::string& s)
{
    if (s == "none") return Recalibration::None;
    if (s == "temp" || s == "temperature") return Recalibration::Temperature;
    if (s == "platt") return Recalibration::Platt;
    throw ValidationError("unknown recalibration '" + s + "' (expected none|temp|platt)");
}

std::string to_string(Recalibration r)
{
    switch (r) {
    case Recalibration::None: return "none";
    case Recalibration::Temperature: return "temp";
    case Recalibration::Platt: return "platt";
    }
    return "none";
}

RecalibrationResult recalibrate(const CalibrationResult& calib, const Dataset& data, Recalibration method,
                                double fit_frac, int num_bins)
{
    if (!(fit_frac > 0.0) || !(fit_frac < 1.0)) throw ValidationError("fit fraction must be in (0, 1)");
    RecalibrationResult out;
    out.fit_images = static_cast<std::size_t>(std::floor(fit_frac * static_cast<double>(data.size())));
    std::vector<std::string> fit_ids;
    for (std::size_t k = 0; k < out.fit_images; ++k) fit_ids.push_back(data.items[k].id);
    std::sort(fit_ids.begin(), fit_ids.end());
    std::vector<CalibrationRecord> fit, rest;
    for (const auto& r : calib.records)
        (std::binary_search(fit_ids.begin(), fit_ids.end(), r.image_id) ? fit : rest).push_back(r);
    if (rest.empty()) throw ValidationError("no images left for evaluation after the fit split");
    out.before = reliability(rest, num_bins);
    std::vector<CalibrationRecord> mapped = rest;
    if (method == Recalibration::Temperature) {
        out.temperature = fit_temperature(fit);
        for (auto& r : mapped) r.confidence = apply_temperature(r.confidence, out.temperature);
    } else if (method == Recalibration::Platt) {
        out.platt = fit_platt(fit);
        for (auto& r : mapped) r.confidence = apply_platt(r.confidence, out.platt);
    }
    out.after = reliability(mapped, num_bins);
    return out;
}

void write_pgm(const Grid& field, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out << "P5\n" << field.w_px() << ' ' << field.h_px() << "\n255\n";
    for (int i = 0; i < field.h_px(); ++i)
        for (int j = 0; j < field.w_px(); ++j) {
            const double v = std::clamp(field(i, j, 0), 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (!out) throw ValidationError("failed writing " + path.string());
}

Grid void_heatmap(const VoidSource& source, const DatasetItem& item, double area_frac, CalibrationMode mode)
{
    const int H = item.input.h_px();
    const int W = item.input.w_px();
    const double side = std::sqrt(area_frac);
    Grid out(H, W, 1);
    if (source.kind == VoidSource::Kind::Occupancy) {
        const Grid free = occupancy_free_probs(*source.checkpoint, item.input);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) out(i, j) = baseline_product_void(free, {(j + 0.5) / W, (i + 0.5) / H, side, side});
        return out;
    }
    IntensityField field;
    MarkMaps maps;
    ResidualModel residual;
    if (source.kind == VoidSource::Kind::True) {
        if (!item.true_field || !item.true_maps) throw ValidationError("image has no stored true fields");
        field = *item.true_field;
        maps = *item.true_maps;
        if (source.true_residual) residual = *source.true_residual;
    } else {
        CmpppOutputs o = forward(source.checkpoint->params, item.input);
        field = std::move(o.field);
        maps = std::move(o.maps);
        residual = source.checkpoint->residual;
    }
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const TestRegion r{(j + 0.5) / W, (i + 0.5) / H, side, side};
            out(i, j) = mode == CalibrationMode::Center ? center_void_probability(field, r)
                                                        : box_void_probability(field, maps, residual, r);
        }
    return out;
}

}  // namespace cmppp
