#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmppp/convnet.hpp"
#include "cmppp/infer.hpp"
#include "cmppp/io.hpp"
#include "cmppp/synth.hpp"

namespace cmppp {

/// Center-size box.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
};

inline Box box_of(const MarkedPoint& p) { return {p.x, p.y, p.w, p.h}; }
inline Box box_of(const Detection& d) { return {d.x, d.y, d.w, d.h}; }

/// Intersection over union; 0 when the union has zero area.
double iou(const Box& a, const Box& b);

struct MatchResult {
    double iou_threshold = 0.5;
    /// Per detection (input order): matched gt index or -1 for a false positive.
    std::vector<int> det_gt;
    /// Per gt: whether some detection matched it.
    std::vector<bool> gt_matched;

    std::size_t tp() const;
    std::size_t fp() const { return det_gt.size() - tp(); }
    std::size_t fn() const;
};

/// Greedy matching in descending score order (stable for equal scores):
/// each detection takes the unmatched same-class gt of highest IoU if that
/// IoU reaches the threshold.
MatchResult match(std::span<const Detection> dets, const MarkedPointConfig& gt, double iou_thr = 0.5);

struct ImageRecord {
    std::vector<Detection> dets;
    MarkedPointConfig gt;
};

struct ApReport {
    std::vector<double> iou_thresholds;
    /// Per class AP averaged over the thresholds; NaN for classes without gt.
    std::vector<double> ap;
    std::vector<std::size_t> gt_count;
    double map = 0.0;
    /// Counts at the first threshold.
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    OrderedJson to_json() const;
};

/// 101-point interpolated AP per class, mAP over classes with at least one
/// gt. With multi_iou the AP is averaged over IoU 0.50:0.05:0.95.
ApReport average_precision(std::span<const ImageRecord> records, int num_classes, double iou_thr = 0.5,
                           bool multi_iou = false);

/// AP of a single ranked list: flags in descending score order and the gt total.
double interpolated_ap(const std::vector<bool>& tp_sorted, std::size_t num_gt);

struct AblationRow {
    int crop_px = 0;
    std::size_t fp = 0;
    std::size_t tp = 0;
    std::size_t fn = 0;
    double map = 0.0;
};

/// Runs detection at each crop size; one forward pass per image.
std::vector<AblationRow> crop_ablation(const Checkpoint& ckpt, const Dataset& data, std::span<const int> crops,
                                       int threads = 1, bool multi_iou = false);

/// Columns crop_px,fp,tp,fn,map.
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace cmppp
