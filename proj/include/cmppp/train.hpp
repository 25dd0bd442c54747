#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cmppp/convnet.hpp"
#include "cmppp/io.hpp"
#include "cmppp/nll.hpp"
#include "cmppp/synth.hpp"

namespace cmppp {

enum class LrSchedule {
    Constant,
    Cosine  // decays to 0 over the last step; needed for the L1 size term to settle
};

std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& s);

struct TrainConfig {
    int epochs = 6;
    int batch_size = 8;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double clip_norm = 10.0;
    LrSchedule lr_schedule = LrSchedule::Cosine;
    std::uint64_t seed = 0;
    std::string train_data;
    std::string val_data;  // optional
    ResidualKind residual = ResidualKind::Laplace;
    SigmaNormalization sigma_normalization = SigmaNormalization::MaximumLikelihood;
    /// Write an intermediate checkpoint every this many epochs (0: final only).
    int checkpoint_interval = 0;
    int width = 16;
    /// "cmppp" trains the marked point process; "occupancy" trains the
    /// per-pixel occupancy classifier used as the independent-pixel baseline.
    ModelType model = ModelType::Cmppp;

    void validate() const;
    /// Learning rate used for optimizer step `step` of `total_steps`.
    double learning_rate_at(std::size_t step, std::size_t total_steps) const;
    OrderedJson to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const Json& j);
};

/// One optimizer step. For the occupancy model the mean pixel cross-entropy
/// is reported in `total` and the other terms are zero.
struct TrainLogRow {
    int epoch = 0;
    std::size_t step = 0;
    CmpppLossBreakdown loss;
};

/// CSV with header epoch,step,intensity_integral,center_term,regression_term,classification_term,total.
std::string train_log_csv(const std::vector<TrainLogRow>& rows);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TrainLogRow> log;
};

/// Called after each epoch with the epoch number (1-based) and the current
/// checkpoint (sigma is still the training value 1 at that point).
using EpochCallback = std::function<void(int epoch, const Checkpoint&)>;

/// Minimizes the mean per-image loss with momentum SGD and gradient-norm
/// clipping; then fixes sigma-hat from the training residuals.
TrainResult train(const TrainConfig& config, const Dataset& data, int threads = 1,
                  const EpochCallback& on_epoch = {});

/// Loads config.train_data, trains, and writes model.ckpt, train_log.csv,
/// train_config.json and (per checkpoint_interval) model_epoch<k>.ckpt.
TrainResult train_to_dir(const TrainConfig& config, const std::filesystem::path& out_dir, int threads = 1);

/// Mean per-image CMPPP loss of a checkpoint using its stored residual model.
CmpppLossBreakdown eval_loss(const Checkpoint& ckpt, const Dataset& data, int threads = 1);

/// Sigma-hat of a parameter vector over a dataset.
double fit_sigma(const ConvNetParams& params, const Dataset& data, ResidualKind kind,
                 SigmaNormalization norm = SigmaNormalization::MaximumLikelihood, int threads = 1);

/// Per-pixel occupancy target: 1 where the pixel center lies in a
/// positive-area gt box (closed rectangle), else 0.
Grid occupancy_target(const MarkedPointConfig& gt, int h_px, int w_px);

/// Mean pixel binary cross-entropy of the occupancy logits and its gradient
/// with respect to them.
double occupancy_loss(const Grid& logits, const Grid& target, Grid* d_logits = nullptr);

}  // namespace cmppp
