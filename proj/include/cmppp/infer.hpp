#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmppp/convnet.hpp"
#include "cmppp/io.hpp"

namespace cmppp {

struct PeakResult {
    std::vector<PixelIndex> peaks;
    /// round-half-to-even of the expected count.
    std::size_t requested = 0;
    /// True when suppression covered every pixel before `requested` peaks
    /// were found.
    bool capped = false;
};

/// Takes round(expected_count) maxima of L. After each pick a crop_px x
/// crop_px square (rows i - crop_px/2 .. i - crop_px/2 + crop_px - 1, same for
/// columns, clipped) is removed from the working copy. Ties go to the first
/// pixel in row-major order. Picks stop early once nothing is left.
PeakResult extract_peaks(const IntensityField& field, int crop_px = 32);

struct Detection {
    std::string image_id;
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    int class_id = 0;
    /// 1 - exp(-intensity mass removed by this peak's crop).
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Peaks of the field with marks read from B (clamped at 0) and the argmax
/// of C at the peak pixel.
std::vector<Detection> detect(const IntensityField& field, const MarkMaps& maps, int crop_px = 32,
                              const std::string& image_id = "", PeakResult* meta = nullptr);
std::vector<Detection> detect(const Checkpoint& ckpt, const Grid& input, int crop_px = 32,
                              const std::string& image_id = "", PeakResult* meta = nullptr);

struct EnsembleResult {
    IntensityField field;  // L = ln(mean lambda)
    MarkMaps maps;         // mean B, mean C
    Grid lambda_std;       // population standard deviation of member lambdas
};

EnsembleResult ensemble(std::span<const IntensityField> fields, std::span<const MarkMaps> maps);

OrderedJson detection_to_json(const Detection& d);
/// One JSON object per line.
std::string detections_to_jsonl(std::span<const Detection> dets);

}  // namespace cmppp
