#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmppp/core.hpp"
#include "cmppp/io.hpp"
#include "cmppp/marks.hpp"
#include "cmppp/nll.hpp"
#include "cmppp/pointprocess.hpp"
#include "cmppp/rng.hpp"

namespace cmppp {

/// Dilated fully-convolutional network: 3x3 conv layers with zero padding and
/// ReLU, followed by a 1x1 linear head. Output resolution equals input
/// resolution.
struct ConvNetArch {
    int in_channels = 3;
    int width = 16;
    std::vector<int> dilations{1, 2, 4, 8, 1};
    int out_channels = 6;  // 1 + 2 + |C| for the CMPPP head
    /// Size outputs are head activations times this unit, so the size rows
    /// work at the same numeric scale as the others.
    double size_unit = 1.0;

    static ConvNetArch cmppp(int num_classes, int width = 16);

    int num_conv_layers() const { return static_cast<int>(dilations.size()); }
    /// Number of scalar parameters: sum over conv layers of (in*9+1)*width,
    /// plus (width+1)*out_channels for the head.
    std::size_t num_params() const;
    /// Pixels of context on each side seen by an output pixel.
    int receptive_radius() const;

    OrderedJson to_json() const;
    static ConvNetArch from_json(const Json& j);

    friend bool operator==(const ConvNetArch&, const ConvNetArch&) = default;
};

/// Location of one layer's weights and biases inside the flat parameter vector.
struct ParamBlock {
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    int in = 0;
    int out = 0;
    int kernel = 3;
    int dilation = 1;

    std::size_t weight_count() const { return static_cast<std::size_t>(in) * out * kernel * kernel; }
};

std::vector<ParamBlock> param_blocks(const ConvNetArch& arch);

struct ConvNetParams {
    ConvNetArch arch;
    std::vector<double> values;

    friend bool operator==(const ConvNetParams&, const ConvNetParams&) = default;
};

struct InitOptions {
    /// Training-set mean object count; sets the log-intensity bias to ln(n).
    double mean_count = 1.0;
    /// Optional initial size-head bias (w, h); zero when absent.
    double mean_w = 0.0;
    double mean_h = 0.0;
};

/// Fan-in scaled uniform initialization: conv weights U(+-sqrt(6/fan_in)),
/// head weights U(+-sqrt(1/fan_in)) (a tenth of that for the intensity row),
/// zero biases except the intensity and size heads.
ConvNetParams init_params(Rng& rng, const ConvNetArch& arch, const InitOptions& options = {});
ConvNetParams init_params(Rng& rng, int num_classes, const InitOptions& options = {});

/// Channel-major activation tensor.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    double* channel(int k) { return data.data() + k * plane(); }
    const double* channel(int k) const { return data.data() + k * plane(); }

    static Tensor from_grid(const Grid& g);
    Grid to_grid() const;
};

/// Activations kept for the backward pass.
struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> pre;   // conv outputs before ReLU
    std::vector<Tensor> post;  // after ReLU
    Tensor output;             // head output
};

ForwardTrace forward_trace(const ConvNetParams& params, const Grid& input);
Tensor forward_raw(const ConvNetParams& params, const Grid& input);

/// Exact reverse-mode gradient of sum(d_output * output) with respect to the
/// parameters. Blocks flagged in `frozen` (conv layers first, head last)
/// receive zero gradient.
std::vector<double> backward(const ConvNetParams& params, const ForwardTrace& trace, const Tensor& d_output,
                             const std::vector<bool>& frozen = {});

struct CmpppOutputs {
    IntensityField field;
    MarkMaps maps;
};

/// Splits a head output into L (channel 0), B (1-2, times size_unit) and
/// class logits (3+).
CmpppOutputs split_outputs(const Tensor& output, double size_unit = 1.0);
/// Inverse of split_outputs for gradients.
Tensor merge_gradients(const NllGradients& grads, double size_unit = 1.0);

/// forward: input H x W x 3 -> (IntensityField, MarkMaps).
CmpppOutputs forward(const ConvNetParams& params, const Grid& input);

/// Upstream gradients on L, B and C -> parameter gradient.
std::vector<double> backward(const ConvNetParams& params, const Grid& input, const NllGradients& upstream,
                             const std::vector<bool>& frozen = {});

enum class ModelType { Cmppp, Occupancy };
std::string to_string(ModelType t);
ModelType model_type_from_string(const std::string& s);

/// Trained model plus the metadata needed to reproduce or apply it.
struct Checkpoint {
    ModelType model_type = ModelType::Cmppp;
    ConvNetParams params;
    int num_classes = 0;
    ResidualModel residual;  // sigma-hat after training
    std::uint64_t seed = 0;
    std::string rng_algorithm = RngStream::kAlgorithmId;
    OrderedJson extra = OrderedJson::object();  // training config echo

    OrderedJson metadata() const;
};

// Checkpoint file: "CMPPPCKPT1\n", one JSON metadata line, then the raw
// little-endian float64 parameter payload. The metadata carries the
// parameter count; a payload of any other length is rejected.
inline constexpr const char* kCheckpointMagic = "CMPPPCKPT1";
inline constexpr const char* kCheckpointFileName = "model.ckpt";

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Accepts either a checkpoint file or a directory containing model.ckpt.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cmppp
