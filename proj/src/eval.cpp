#include "cmppp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "cmppp/parallel.hpp"

namespace cmppp {

double iou(const Box& a, const Box& b)
{
    const double ix = std::min(a.x + 0.5 * a.w, b.x + 0.5 * b.w) - std::max(a.x - 0.5 * a.w, b.x - 0.5 * b.w);
    const double iy = std::min(a.y + 0.5 * a.h, b.y + 0.5 * b.h) - std::max(a.y - 0.5 * a.h, b.y - 0.5 * b.h);
    const double inter = ix > 0.0 && iy > 0.0 ? ix * iy : 0.0;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::size_t MatchResult::tp() const
{
    return static_cast<std::size_t>(std::count_if(det_gt.begin(), det_gt.end(), [](int g) { return g >= 0; }));
}

std::size_t MatchResult::fn() const
{
    return static_cast<std::size_t>(std::count(gt_matched.begin(), gt_matched.end(), false));
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets)
{
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    return order;
}

}  // namespace

MatchResult match(std::span<const Detection> dets, const MarkedPointConfig& gt, double iou_thr)
{
    MatchResult r;
    r.iou_threshold = iou_thr;
    r.det_gt.assign(dets.size(), -1);
    r.gt_matched.assign(gt.size(), false);
    for (std::size_t d : score_order(dets)) {
        int best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (r.gt_matched[g] || gt.points[g].class_id != dets[d].class_id) continue;
            const double v = iou(box_of(dets[d]), box_of(gt.points[g]));
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0 && best_iou >= iou_thr) {
            r.det_gt[d] = best;
            r.gt_matched[static_cast<std::size_t>(best)] = true;
        }
    }
    return r;
}

double interpolated_ap(const std::vector<bool>& tp_sorted, std::size_t num_gt)
{
    if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = tp_sorted.size();
    std::vector<double> prec(n), rec(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (tp_sorted[k]) ++tp;
        prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        rec[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    // Precision envelope from the right.
    for (std::size_t k = n; k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
    double sum = 0.0;
    std::size_t k = 0;
    for (int t = 0; t <= 100; ++t) {
        const double r = t / 100.0;
        while (k < n && rec[k] < r) ++k;
        if (k < n) sum += prec[k];
    }
    return sum / 101.0;
}

ApReport average_precision(std::span<const ImageRecord> records, int num_classes, double iou_thr, bool multi_iou)
{
    ApReport rep;
    if (multi_iou)
        for (int t = 0; t < 10; ++t) rep.iou_thresholds.push_back(0.5 + 0.05 * t);
    else
        rep.iou_thresholds.push_back(iou_thr);
    rep.gt_count.assign(static_cast<std::size_t>(num_classes), 0);
    for (const auto& r : records)
        for (const auto& p : r.gt.points)
            if (p.class_id >= 0 && p.class_id < num_classes) ++rep.gt_count[static_cast<std::size_t>(p.class_id)];

    std::vector<double> ap_sum(static_cast<std::size_t>(num_classes), 0.0);
    for (std::size_t t = 0; t < rep.iou_thresholds.size(); ++t) {
        struct Ranked {
            double score;
            bool tp;
        };
        std::vector<std::vector<Ranked>> per_class(static_cast<std::size_t>(num_classes));
        for (const auto& r : records) {
            const MatchResult m = match(r.dets, r.gt, rep.iou_thresholds[t]);
            if (t == 0) {
                rep.tp += m.tp();
                rep.fp += m.fp();
                rep.fn += m.fn();
            }
            for (std::size_t d = 0; d < r.dets.size(); ++d) {
                const int c = r.dets[d].class_id;
                if (c < 0 || c >= num_classes) continue;
                per_class[static_cast<std::size_t>(c)].push_back({r.dets[d].score, m.det_gt[d] >= 0});
            }
        }
        for (int c = 0; c < num_classes; ++c) {
            auto& v = per_class[static_cast<std::size_t>(c)];
            std::stable_sort(v.begin(), v.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
            std::vector<bool> flags(v.size());
            for (std::size_t k = 0; k < v.size(); ++k) flags[k] = v[k].tp;
            ap_sum[static_cast<std::size_t>(c)] += interpolated_ap(flags, rep.gt_count[static_cast<std::size_t>(c)]);
        }
    }
    rep.ap.resize(static_cast<std::size_t>(num_classes));
    double total = 0.0;
    int used = 0;
    for (int c = 0; c < num_classes; ++c) {
        rep.ap[static_cast<std::size_t>(c)] = ap_sum[static_cast<std::size_t>(c)] / rep.iou_thresholds.size();
        if (rep.gt_count[static_cast<std::size_t>(c)] > 0) {
            total += rep.ap[static_cast<std::size_t>(c)];
            ++used;
        }
    }
    rep.map = used > 0 ? total / used : 0.0;
    return rep;
}

OrderedJson ApReport::to_json() const
{
    OrderedJson j;
    j["convention"] = iou_thresholds.size() == 1 ? "single-iou, 101-point interpolation"
                                                 : "iou 0.50:0.05:0.95 averaged, 101-point interpolation";
    j["iou_thresholds"] = iou_thresholds;
    j["map"] = map;
    OrderedJson per = OrderedJson::array();
    for (std::size_t c = 0; c < ap.size(); ++c) {
        OrderedJson e;
        e["class_id"] = c;
        e["gt"] = gt_count[c];
        if (gt_count[c] > 0)
            e["ap"] = ap[c];
        else
            e["ap"] = nullptr;
        per.push_back(e);
    }
    j["per_class"] = per;
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    return j;
}

std::vector<AblationRow> crop_ablation(const Checkpoint& ckpt, const Dataset& data, std::span<const int> crops,
                                       int threads, bool multi_iou)
{
    if (ckpt.model_type != ModelType::Cmppp) throw ValidationError("crop ablation needs a CMPPP checkpoint");
    for (int c : crops)
        if (c < 1) throw ValidationError("crop sizes must be >= 1");
    // dets[c][k]: detections of image k at crop index c.
    std::vector<std::vector<ImageRecord>> recs(crops.size(), std::vector<ImageRecord>(data.size()));
    parallel_for(data.size(), threads, [&](std::size_t k) {
        const CmpppOutputs out = forward(ckpt.params, data.items[k].input);
        for (std::size_t c = 0; c < crops.size(); ++c) {
            recs[c][k].dets = detect(out.field, out.maps, crops[c], data.items[k].id);
            recs[c][k].gt = data.items[k].gt;
        }
    });
    std::vector<AblationRow> rows;
    for (std::size_t c = 0; c < crops.size(); ++c) {
        const ApReport ap = average_precision(recs[c], ckpt.num_classes, 0.5, multi_iou);
        rows.push_back({crops[c], ap.fp, ap.tp, ap.fn, ap.map});
    }
    return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows)
{
    std::string out = "crop_px,fp,tp,fn,map\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%zu,%zu,%zu,%.6f\n", r.crop_px, r.fp, r.tp, r.fn, r.map);
        out += buf;
    }
    return out;
}

}  // namespace cmppp
