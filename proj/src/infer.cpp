#include "cmppp/infer.hpp"

#include <algorithm>
#include <cmath>

namespace cmppp {

PeakResult extract_peaks(const IntensityField& field, int crop_px)
{
    if (crop_px < 1) throw ValidationError("crop_px must be >= 1");
    const int H = field.h_px();
    const int W = field.w_px();
    PeakResult r;
    r.requested = static_cast<std::size_t>(std::nearbyint(expected_count(field)));
    std::vector<char> removed(static_cast<std::size_t>(H) * W, 0);
    std::size_t remaining = removed.size();
    const int lo = crop_px / 2;
    while (r.peaks.size() < r.requested) {
        if (remaining == 0) {
            r.capped = true;
            break;
        }
        int bi = -1, bj = -1;
        double best = 0.0;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                if (removed[static_cast<std::size_t>(i) * W + j]) continue;
                const double v = field.log_lambda(i, j);
                if (bi < 0 || v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        r.peaks.push_back({bi, bj});
        for (int i = std::max(0, bi - lo); i <= std::min(H - 1, bi - lo + crop_px - 1); ++i)
            for (int j = std::max(0, bj - lo); j <= std::min(W - 1, bj - lo + crop_px - 1); ++j) {
                char& m = removed[static_cast<std::size_t>(i) * W + j];
                if (!m) {
                    m = 1;
                    --remaining;
                }
            }
    }
    return r;
}

std::vector<Detection> detect(const IntensityField& field, const MarkMaps& maps, int crop_px,
                              const std::string& image_id, PeakResult* meta)
{
    maps.check_extent(field.h_px(), field.w_px());
    const int H = field.h_px();
    const int W = field.w_px();
    const PeakResult peaks = extract_peaks(field, crop_px);
    // Replay the suppression to attribute each crop's captured mass.
    std::vector<char> removed(static_cast<std::size_t>(H) * W, 0);
    const int lo = crop_px / 2;
    const double m = field.pixel_mass();
    std::vector<Detection> out;
    out.reserve(peaks.peaks.size());
    for (const auto& p : peaks.peaks) {
        double mass = 0.0;
        for (int i = std::max(0, p.i - lo); i <= std::min(H - 1, p.i - lo + crop_px - 1); ++i)
            for (int j = std::max(0, p.j - lo); j <= std::min(W - 1, p.j - lo + crop_px - 1); ++j) {
                char& r = removed[static_cast<std::size_t>(i) * W + j];
                if (!r) {
                    r = 1;
                    mass += field.lambda(i, j);
                }
            }
        Detection d;
        d.image_id = image_id;
        d.x = (p.j + 0.5) / W;
        d.y = (p.i + 0.5) / H;
        const SizePair b = maps.size_at(p.i, p.j);
        d.w = std::max(0.0, b.w);
        d.h = std::max(0.0, b.h);
        const auto logits = maps.logits_at(p.i, p.j);
        d.class_id = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        d.score = -std::expm1(-mass * m);
        out.push_back(std::move(d));
    }
    if (meta) *meta = peaks;
    return out;
}

std::vector<Detection> detect(const Checkpoint& ckpt, const Grid& input, int crop_px, const std::string& image_id,
                              PeakResult* meta)
{
    if (ckpt.model_type != ModelType::Cmppp) throw ValidationError("detection needs a CMPPP checkpoint");
    const CmpppOutputs out = forward(ckpt.params, input);
    return detect(out.field, out.maps, crop_px, image_id, meta);
}

EnsembleResult ensemble(std::span<const IntensityField> fields, std::span<const MarkMaps> maps)
{
    if (fields.empty()) throw ValidationError("ensemble needs at least one member");
    if (fields.size() != maps.size()) throw DimensionError("ensemble needs one mark map per intensity field");
    const int H = fields[0].h_px();
    const int W = fields[0].w_px();
    const int C = maps[0].num_classes();
    for (std::size_t k = 0; k < fields.size(); ++k) {
        if (fields[k].h_px() != H || fields[k].w_px() != W) throw DimensionError("ensemble members differ in shape");
        maps[k].check_extent(H, W);
        if (maps[k].num_classes() != C) throw DimensionError("ensemble members differ in class count");
    }
    const double n = static_cast<double>(fields.size());
    Grid L(H, W, 1);
    Grid sd(H, W, 1);
    Grid b(H, W, 2);
    Grid c(H, W, C);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double mean = 0.0;
            for (const auto& f : fields) mean += f.lambda(i, j);
            mean /= n;
            double var = 0.0;
            for (const auto& f : fields) {
                const double d = f.lambda(i, j) - mean;
                var += d * d;
            }
            L(i, j) = std::log(mean);
            sd(i, j) = std::sqrt(var / n);
            for (int ch = 0; ch < 2; ++ch) {
                double s = 0.0;
                for (const auto& mm : maps) s += mm.b(i, j, ch);
                b(i, j, ch) = s / n;
            }
            for (int ch = 0; ch < C; ++ch) {
                double s = 0.0;
                for (const auto& mm : maps) s += mm.c(i, j, ch);
                c(i, j, ch) = s / n;
            }
        }
    return {IntensityField(std::move(L)), MarkMaps{std::move(b), std::move(c)}, std::move(sd)};
}

OrderedJson detection_to_json(const Detection& d)
{
    OrderedJson j;
    j["image_id"] = d.image_id;
    j["x"] = d.x;
    j["y"] = d.y;
    j["w"] = d.w;
    j["h"] = d.h;
    j["class_id"] = d.class_id;
    j["score"] = d.score;
    return j;
}

std::string detections_to_jsonl(std::span<const Detection> dets)
{
    std::string out;
    for (const auto& d : dets) out += detection_to_json(d).dump() + "\n";
    return out;
}

}  // namespace cmppp
