#include "cmppp/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>

#include "cmppp/parallel.hpp"

namespace cmppp {

namespace {

// Sub-stream ids of the training seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStreamBase = 1u << 20;

}  // namespace

std::string to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

LrSchedule lr_schedule_from_string(const std::string& s)
{
    if (s == "cosine") return LrSchedule::Cosine;
    if (s == "constant") return LrSchedule::Constant;
    throw ValidationError("lr_schedule must be cosine|constant, got '" + s + "'");
}

double TrainConfig::learning_rate_at(std::size_t step, std::size_t total_steps) const
{
    if (lr_schedule == LrSchedule::Constant || total_steps == 0) return learning_rate;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainConfig::validate() const
{
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
    if (!(momentum >= 0.0) || momentum >= 1.0) throw ValidationError("momentum must be in [0, 1)");
    if (!(clip_norm > 0.0)) throw ValidationError("clip_norm must be > 0");
    if (checkpoint_interval < 0) throw ValidationError("checkpoint_interval must be >= 0");
    if (width < 1) throw ValidationError("width must be >= 1");
}

OrderedJson TrainConfig::to_json() const
{
    OrderedJson j;
    j["model"] = to_string(model);
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["momentum"] = momentum;
    j["clip_norm"] = clip_norm;
    j["lr_schedule"] = to_string(lr_schedule);
    j["seed"] = seed;
    j["train_data"] = train_data;
    j["val_data"] = val_data;
    j["residual"] = to_string(residual);
    j["sigma_normalization"] = sigma_normalization == SigmaNormalization::MaximumLikelihood ? "mle" : "mean-deviation";
    j["checkpoint_interval"] = checkpoint_interval;
    j["width"] = width;
    return j;
}

TrainConfig TrainConfig::from_json(const Json& j)
{
    static const std::set<std::string> known{"model",      "epochs",    "batch_size", "learning_rate",
                                             "momentum",   "clip_norm", "seed",       "train_data",
                                             "val_data",   "residual",  "sigma_normalization",
                                             "checkpoint_interval",     "width",     "lr_schedule"};
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ValidationError("unknown train config key '" + k + "'");
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = model_type_from_string(j["model"].get<std::string>());
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        if (j.contains("lr_schedule")) c.lr_schedule = lr_schedule_from_string(j["lr_schedule"].get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.train_data = j.value("train_data", c.train_data);
        c.val_data = j.value("val_data", c.val_data);
        if (j.contains("residual")) c.residual = residual_kind_from_string(j["residual"].get<std::string>());
        if (j.contains("sigma_normalization")) {
            const auto s = j["sigma_normalization"].get<std::string>();
            if (s == "mle")
                c.sigma_normalization = SigmaNormalization::MaximumLikelihood;
            else if (s == "mean-deviation")
                c.sigma_normalization = SigmaNormalization::MeanAbsoluteDeviation;
            else
                throw ValidationError("sigma_normalization must be mle|mean-deviation");
        }
        c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
        c.width = j.value("width", c.width);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("bad train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string train_log_csv(const std::vector<TrainLogRow>& rows)
{
    std::string out = "epoch,step,intensity_integral,center_term,regression_term,classification_term,total\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.step,
                      r.loss.intensity_integral, r.loss.center_term, r.loss.regression_term,
                      r.loss.classification_term, r.loss.total);
        out += buf;
    }
    return out;
}

Grid occupancy_target(const MarkedPointConfig& gt, int h_px, int w_px)
{
    Grid t(h_px, w_px, 1);
    for (const auto& p : gt.points) {
        if (!(p.w > 0.0) || !(p.h > 0.0)) continue;
        const PixelSpan s = pixels_in({p.x, p.y, p.w, p.h}, h_px, w_px);
        for (int i = s.i0; i < s.i1; ++i)
            for (int j = s.j0; j < s.j1; ++j) t(i, j) = 1.0;
    }
    return t;
}

double occupancy_loss(const Grid& logits, const Grid& target, Grid* d_logits)
{
    if (!logits.same_shape(target) || logits.channels() != 1)
        throw DimensionError("occupancy logits and target must both be H x W x 1");
    const double m = logits.pixel_mass();
    if (d_logits) *d_logits = Grid(logits.h_px(), logits.w_px(), 1);
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        const double z = logits.values()[k];
        const double y = target.values()[k];
        // softplus(z) - y z, stable for both signs.
        sum += std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))) - y * z;
        if (d_logits) {
            const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            d_logits->values()[k] = (s - y) * m;
        }
    }
    return sum * m;
}

namespace {

struct ImageStep {
    CmpppLossBreakdown loss;
    std::vector<double> grad;
};

void check_finite(const CmpppLossBreakdown& b, int epoch, const std::string& image_id)
{
    const std::pair<const char*, double> terms[] = {{"intensity_integral", b.intensity_integral},
                                                    {"center_term", b.center_term},
                                                    {"regression_term", b.regression_term},
                                                    {"classification_term", b.classification_term}};
    for (const auto& [name, v] : terms)
        if (!std::isfinite(v))
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", image " + image_id +
                               ", term " + name);
}

ImageStep image_step(const ConvNetParams& params, ModelType type, const ResidualModel& train_residual,
                     const DatasetItem& item, int epoch)
{
    ImageStep st;
    const ForwardTrace tr = forward_trace(params, item.input);
    if (type == ModelType::Cmppp) {
        CmpppOutputs out;
        try {
            out = split_outputs(tr.output, params.arch.size_unit);
        } catch (const NumericError&) {
            throw NumericError("non-finite log-intensity at epoch " + std::to_string(epoch) + ", image " + item.id +
                               ", term intensity_integral");
        }
        NllGradients g;
        st.loss = nll_with_grad(out.field, out.maps, train_residual, item.gt, g);
        check_finite(st.loss, epoch, item.id);
        st.grad = backward(params, tr, merge_gradients(g, params.arch.size_unit));
    } else {
        const Grid logits = tr.output.to_grid();
        Grid d;
        st.loss.classification_term = 0.0;
        st.loss.total = occupancy_loss(logits, occupancy_target(item.gt, logits.h_px(), logits.w_px()), &d);
        if (!std::isfinite(st.loss.total))
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", image " + item.id +
                               ", term occupancy_bce");
        st.grad = backward(params, tr, Tensor::from_grid(d));
    }
    return st;
}

ConvNetArch architecture_for(const TrainConfig& config, int num_classes)
{
    if (config.model == ModelType::Cmppp) return ConvNetArch::cmppp(num_classes, config.width);
    ConvNetArch a;
    a.width = config.width;
    a.out_channels = 1;
    return a;
}

}  // namespace

double fit_sigma(const ConvNetParams& params, const Dataset& data, ResidualKind kind, SigmaNormalization norm,
                 int threads)
{
    std::vector<std::vector<SizePair>> per_image(data.size());
    parallel_for(data.size(), threads, [&](std::size_t k) {
        const CmpppOutputs out = forward(params, data.items[k].input);
        collect_residuals(out.maps, data.items[k].gt, per_image[k]);
    });
    std::vector<SizePair> all;
    for (const auto& v : per_image) all.insert(all.end(), v.begin(), v.end());
    if (all.empty()) return 1.0;  // nothing to estimate from; keep the training scale
    return estimate_sigma(all, kind, norm);
}

TrainResult train(const TrainConfig& config, const Dataset& data, int threads, const EpochCallback& on_epoch)
{
    config.validate();
    if (data.empty()) throw ValidationError("training dataset has no images");
    if (data.num_classes < 1) throw ValidationError("training dataset declares no classes");
    const ConvNetArch arch = architecture_for(config, data.num_classes);
    const int H = data.items.front().input.h_px();
    const int W = data.items.front().input.w_px();

    InitOptions init;
    init.mean_count = std::max(data.mean_count(), 1e-3);
    double sum_w = 0.0, sum_h = 0.0, occupied = 0.0;
    std::size_t n_pts = 0;
    for (const auto& it : data.items) {
        for (const auto& p : it.gt.points) {
            sum_w += p.w;
            sum_h += p.h;
            ++n_pts;
        }
        if (config.model == ModelType::Occupancy) {
            const Grid t = occupancy_target(it.gt, H, W);
            for (double v : t.values()) occupied += v;
        }
    }
    if (n_pts > 0) {
        init.mean_w = sum_w / static_cast<double>(n_pts);
        init.mean_h = sum_h / static_cast<double>(n_pts);
    }
    Rng init_rng(config.seed, kInitStream);
    TrainResult result;
    Checkpoint& ck = result.checkpoint;
    ck.model_type = config.model;
    ck.params = init_params(init_rng, arch, init);
    if (config.model == ModelType::Occupancy) {
        const double frac =
            std::clamp(occupied / (static_cast<double>(data.size()) * H * W), 1e-4, 1.0 - 1e-4);
        ck.params.values[param_blocks(arch).back().bias_offset] = std::log(frac / (1.0 - frac));
    }
    ck.num_classes = data.num_classes;
    ck.seed = config.seed;
    ck.residual = {config.residual, 1.0};
    ck.extra = config.to_json();

    // sigma does not influence the optimum of B, so training runs at sigma = 1.
    const ResidualModel train_residual{config.residual, 1.0};
    const std::size_t P = ck.params.values.size();
    std::vector<double> velocity(P, 0.0);
    std::vector<std::size_t> order(data.size());
    std::size_t step = 0;
    const std::size_t batches_per_epoch =
        (data.size() + static_cast<std::size_t>(config.batch_size) - 1) / static_cast<std::size_t>(config.batch_size);
    const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(config.epochs);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(config.seed, kShuffleStreamBase + static_cast<std::uint64_t>(epoch));
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[shuffle.below(k)]);

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::size_t B = end - start;
            std::vector<ImageStep> steps(B);
            parallel_for(B, threads, [&](std::size_t b) {
                steps[b] = image_step(ck.params, config.model, train_residual, data.items[order[start + b]], epoch);
            });
            // Fixed-order reduction.
            std::vector<double> grad(P, 0.0);
            std::vector<CmpppLossBreakdown> losses(B);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t p = 0; p < P; ++p) grad[p] += steps[b].grad[p];
                losses[b] = steps[b].loss;
            }
            const double inv = 1.0 / static_cast<double>(B);
            double norm2 = 0.0;
            for (double& g : grad) {
                g *= inv;
                norm2 += g * g;
            }
            const double norm = std::sqrt(norm2);
            if (!std::isfinite(norm))
                throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            const double scale = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
            const double lr = config.learning_rate_at(step, total_steps);
            for (std::size_t p = 0; p < P; ++p) {
                velocity[p] = config.momentum * velocity[p] + scale * grad[p];
                ck.params.values[p] -= lr * velocity[p];
            }
            CmpppLossBreakdown mean = mean_breakdown(losses);
            if (config.model == ModelType::Occupancy) {
                double t = 0.0;
                for (const auto& l : losses) t += l.total;
                mean = {};
                mean.total = t * inv;
            }
            result.log.push_back({epoch, step, mean});
            ++step;
        }
        if (on_epoch) on_epoch(epoch, ck);
    }

    if (config.model == ModelType::Cmppp)
        ck.residual.sigma = fit_sigma(ck.params, data, config.residual, config.sigma_normalization, threads);
    return result;
}

TrainResult train_to_dir(const TrainConfig& config, const std::filesystem::path& out_dir, int threads)
{
    config.validate();
    if (config.train_data.empty()) throw ValidationError("train config needs train_data");
    const Dataset data = load_dataset(config.train_data, false);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw ValidationError("cannot create output directory " + out_dir.string());

    auto on_epoch = [&](int epoch, const Checkpoint& ck) {
        if (config.checkpoint_interval > 0 && epoch % config.checkpoint_interval == 0 && epoch < config.epochs)
            write_checkpoint(ck, out_dir / ("model_epoch" + std::to_string(epoch) + ".ckpt"));
    };
    TrainResult r = train(config, data, threads, on_epoch);
    write_checkpoint(r.checkpoint, out_dir / kCheckpointFileName);
    write_text(out_dir / "train_log.csv", train_log_csv(r.log));

    OrderedJson echo;
    echo["config"] = config.to_json();
    echo["rng_algorithm"] = RngStream::kAlgorithmId;
    echo["num_images"] = data.size();
    echo["sigma_hat"] = r.checkpoint.residual.sigma;
    if (!config.val_data.empty() && config.model == ModelType::Cmppp) {
        const CmpppLossBreakdown v = eval_loss(r.checkpoint, load_dataset(config.val_data, false), threads);
        OrderedJson vj;
        vj["intensity_integral"] = v.intensity_integral;
        vj["center_term"] = v.center_term;
        vj["regression_term"] = v.regression_term;
        vj["classification_term"] = v.classification_term;
        vj["total"] = v.total;
        echo["val_loss"] = vj;
    }
    write_text(out_dir / "train_summary.json", echo.dump(2) + "\n");
    return r;
}

CmpppLossBreakdown eval_loss(const Checkpoint& ckpt, const Dataset& data, int threads)
{
    if (ckpt.model_type != ModelType::Cmppp) throw ValidationError("eval_loss needs a CMPPP checkpoint");
    if (data.empty()) throw ValidationError("evaluation dataset has no images");
    std::vector<CmpppLossBreakdown> per(data.size());
    parallel_for(data.size(), threads, [&](std::size_t k) {
        const CmpppOutputs out = forward(ckpt.params, data.items[k].input);
        per[k] = cmppp_nll(out.field, out.maps, ckpt.residual, data.items[k].gt);
    });
    return mean_breakdown(per);
}

}  // namespace cmppp
