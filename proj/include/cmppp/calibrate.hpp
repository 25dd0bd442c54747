#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmppp/convnet.hpp"
#include "cmppp/io.hpp"
#include "cmppp/synth.hpp"

namespace cmppp {

struct CalibrationRecord {
    double confidence = 0.0;
    int outcome = 0;  // 1 = drivable
    std::string image_id;
    TestRegion region;
};

struct ReliabilityBin {
    double lo = 0.0;
    double hi = 0.0;
    double mean_confidence = 0.0;
    double frequency = 0.0;
    std::size_t count = 0;
};

struct ReliabilityReport {
    std::vector<ReliabilityBin> bins;
    std::size_t total = 0;
    double ece = 0.0;

    OrderedJson to_json() const;
    /// Columns bin,lo,hi,mean_confidence,frequency,count.
    std::string to_csv() const;
};

/// Equal-width binning on [0,1]; confidence 1 falls into the last bin.
ReliabilityReport reliability(std::span<const CalibrationRecord> records, int num_bins = 10);

/// k rectangles of area exactly area_frac (in normalized units). The
/// aspect ratio (width/height in pixels) is log-uniform on
/// [1/max_aspect, max_aspect], clamped so both sides fit in the image; the
/// center is uniform over placements inside [0,1]^2.
std::vector<TestRegion> sample_test_boxes(Rng& rng, double area_frac, int k = 50, int h_px = 64, int w_px = 64,
                                          double max_aspect = 4.0);

/// 1 iff no gt center lies in the region.
int drivable_center(const MarkedPointConfig& gt, const TestRegion& region);
/// 1 iff no gt box has positive-area overlap with the region.
int drivable_box(const MarkedPointConfig& gt, const TestRegion& region);
/// 1 iff no pixel of the region is occupied according to the per-pixel
/// occupancy target (the drivability notion of a pixel classifier).
int drivable_pixels(const MarkedPointConfig& gt, const TestRegion& region, int h_px, int w_px);

/// Product of per-pixel free probabilities over pixels with centers in the region.
double baseline_product_void(const Grid& pixel_free_probs, const TestRegion& region);

enum class CalibrationMode { Center, Box };
std::string to_string(CalibrationMode m);
CalibrationMode calibration_mode_from_string(const std::string& s);

/// Where void confidences come from: the generative fields stored with a
/// synthetic dataset, a trained CMPPP checkpoint, or an occupancy
/// checkpoint through the independent-pixel product.
struct VoidSource {
    enum class Kind { True, Checkpoint, Occupancy } kind = Kind::True;
    const Checkpoint* checkpoint = nullptr;
    /// Residual model used with the true fields.
    std::optional<ResidualModel> true_residual;

    static VoidSource truth() { return {}; }
    static VoidSource from(const Checkpoint& ck)
    {
        VoidSource s;
        s.kind = ck.model_type == ModelType::Occupancy ? Kind::Occupancy : Kind::Checkpoint;
        s.checkpoint = &ck;
        return s;
    }
};

struct CalibrationOptions {
    double area_frac = 0.01;
    CalibrationMode mode = CalibrationMode::Center;
    int boxes_per_image = 50;
    int num_bins = 10;
    std::uint64_t seed = 0;
    /// Complement-only box void (centers inside the region left out); default includes the
    /// mass of centers inside the region.
    bool literal_box_void = false;
};

struct CalibrationResult {
    std::vector<CalibrationRecord> records;
    ReliabilityReport report;
};

/// Boxes for image k come from Rng(seed, k), so every source sees the same
/// regions. The occupancy source ignores `mode` and scores with the pixel
/// predicate (no occupied pixel in the region).
CalibrationResult calibrate_ppp(const VoidSource& source, const Dataset& data, const CalibrationOptions& options,
                                int threads = 1);

/// Per-pixel free probability 1 - sigmoid(z) of an occupancy checkpoint.
Grid occupancy_free_probs(const Checkpoint& ckpt, const Grid& input);

double logit_clamped(double p);
double sigmoid(double z);

/// T minimizing the cross-entropy of sigmoid(logit(conf)/T); golden-section on [0.05, 20].
double fit_temperature(std::span<const CalibrationRecord> records);
/// (a, b) minimizing the cross-entropy of sigmoid(a logit(conf) + b); damped Newton.
struct PlattParams {
    double a = 1.0;
    double b = 0.0;
};
PlattParams fit_platt(std::span<const CalibrationRecord> records);

double apply_temperature(double conf, double T);
double apply_platt(double conf, const PlattParams& p);

enum class Recalibration { None, Temperature, Platt };
Recalibration recalibration_from_string(const std::string& s);
std::string to_string(Recalibration r);

struct RecalibrationResult {
    ReliabilityReport before;  // on the evaluation split
    ReliabilityReport after;
    double temperature = 1.0;
    PlattParams platt;
    std::size_t fit_images = 0;
};

/// Fits the map on the records of the first fit_frac of images and reports
/// ECE on the remaining images before and after.
RecalibrationResult recalibrate(const CalibrationResult& calib, const Dataset& data, Recalibration method,
                                double fit_frac = 0.2, int num_bins = 10);

/// Binary PGM (P5) of a [0,1] field, row 0 at the top.
void write_pgm(const Grid& field, const std::filesystem::path& path);

/// Void confidence of an axis-aligned square of the given area centered at
/// each pixel, for heatmap dumps.
Grid void_heatmap(const VoidSource& source, const DatasetItem& item, double area_frac, CalibrationMode mode);

}  // namespace cmppp
