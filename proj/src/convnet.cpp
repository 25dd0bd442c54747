#include "cmppp/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cmppp {

ConvNetArch ConvNetArch::cmppp(int num_classes, int width)
{
    if (num_classes < 1) throw ValidationError("need at least one class");
    ConvNetArch a;
    a.width = width;
    a.out_channels = 3 + num_classes;
    a.size_unit = 0.1;
    return a;
}

std::size_t ConvNetArch::num_params() const
{
    std::size_t n = 0;
    int in = in_channels;
    for (std::size_t l = 0; l < dilations.size(); ++l) {
        n += static_cast<std::size_t>(in * 9 + 1) * width;
        in = width;
    }
    n += static_cast<std::size_t>(in + 1) * out_channels;
    return n;
}

int ConvNetArch::receptive_radius() const
{
    int r = 0;
    for (int d : dilations) r += d;
    return r;
}

OrderedJson ConvNetArch::to_json() const
{
    OrderedJson j;
    j["type"] = "dilated-fcn";
    j["in_channels"] = in_channels;
    j["width"] = width;
    j["dilations"] = dilations;
    j["kernel"] = 3;
    j["activation"] = "relu";
    j["out_channels"] = out_channels;
    j["size_unit"] = size_unit;
    return j;
}

ConvNetArch ConvNetArch::from_json(const Json& j)
{
    ConvNetArch a;
    try {
        a.in_channels = j.at("in_channels").get<int>();
        a.width = j.at("width").get<int>();
        a.dilations = j.at("dilations").get<std::vector<int>>();
        a.out_channels = j.at("out_channels").get<int>();
        a.size_unit = j.value("size_unit", 1.0);
    } catch (const Json::exception& e) {
        throw FormatError(std::string("bad architecture metadata: ") + e.what());
    }
    if (a.in_channels < 1 || a.width < 1 || a.out_channels < 1 || a.dilations.empty() || !(a.size_unit > 0.0))
        throw FormatError("bad architecture metadata");
    return a;
}

std::vector<ParamBlock> param_blocks(const ConvNetArch& arch)
{
    std::vector<ParamBlock> blocks;
    std::size_t off = 0;
    int in = arch.in_channels;
    for (int d : arch.dilations) {
        ParamBlock b;
        b.in = in;
        b.out = arch.width;
        b.kernel = 3;
        b.dilation = d;
        b.weight_offset = off;
        off += b.weight_count();
        b.bias_offset = off;
        off += b.out;
        blocks.push_back(b);
        in = arch.width;
    }
    ParamBlock head;
    head.in = in;
    head.out = arch.out_channels;
    head.kernel = 1;
    head.dilation = 1;
    head.weight_offset = off;
    off += head.weight_count();
    head.bias_offset = off;
    blocks.push_back(head);
    return blocks;
}

ConvNetParams init_params(Rng& rng, const ConvNetArch& arch, const InitOptions& options)
{
    if (!(options.mean_count > 0.0)) throw ValidationError("initial mean count must be positive");
    ConvNetParams p;
    p.arch = arch;
    p.values.assign(arch.num_params(), 0.0);
    const auto blocks = param_blocks(arch);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& blk = blocks[b];
        const bool is_head = b + 1 == blocks.size();
        const double fan_in = static_cast<double>(blk.in) * blk.kernel * blk.kernel;
        const double bound = is_head ? std::sqrt(1.0 / fan_in) : std::sqrt(6.0 / fan_in);
        for (std::size_t k = 0; k < blk.weight_count(); ++k)
            p.values[blk.weight_offset + k] = rng.uniform(-bound, bound);
        // Small intensity row: exp() of a full-scale random projection makes the
        // initial expected count drift far from the bias target.
        if (is_head)
            for (int k = 0; k < blk.in; ++k) p.values[blk.weight_offset + k] *= 0.1;
    }
    const auto& head = blocks.back();
    // ln(n/(HW) * HW): a constant field with this value integrates to n.
    p.values[head.bias_offset + 0] = std::log(options.mean_count);
    if (arch.out_channels >= 3) {
        p.values[head.bias_offset + 1] = options.mean_w / arch.size_unit;
        p.values[head.bias_offset + 2] = options.mean_h / arch.size_unit;
    }
    return p;
}

ConvNetParams init_params(Rng& rng, int num_classes, const InitOptions& options)
{
    return init_params(rng, ConvNetArch::cmppp(num_classes), options);
}

Tensor Tensor::from_grid(const Grid& g)
{
    Tensor t(g.channels(), g.h_px(), g.w_px());
    for (int i = 0; i < g.h_px(); ++i)
        for (int j = 0; j < g.w_px(); ++j)
            for (int c = 0; c < g.channels(); ++c)
                t.data[c * t.plane() + static_cast<std::size_t>(i) * t.w + j] = g(i, j, c);
    return t;
}

Grid Tensor::to_grid() const
{
    Grid g(h, w, c);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k) g(i, j, k) = data[k * plane() + static_cast<std::size_t>(i) * w + j];
    return g;
}

namespace {

void check_params(const ConvNetParams& params)
{
    if (params.values.size() != params.arch.num_params())
        throw DimensionError("parameter vector length does not match the architecture");
}

// out[o] = bias[o] + sum_i sum_k W[o][i][k] * shift(in[i], k * dilation).
// Output channels are processed four at a time so each source row is loaded
// once per block.
void conv3x3_forward(const double* weights, const double* bias, const ParamBlock& blk, const Tensor& in,
                     Tensor& out)
{
    const int H = in.h;
    const int W = in.w;
    const int d = blk.dilation;
    constexpr int kBlock = 4;
    out = Tensor(blk.out, H, W);
    for (int o = 0; o < blk.out; ++o) std::fill(out.channel(o), out.channel(o) + out.plane(), bias[o]);
    for (int ob = 0; ob < blk.out; ob += kBlock) {
        const int nb = std::min(kBlock, blk.out - ob);
        for (int i = 0; i < blk.in; ++i) {
            const double* src = in.channel(i);
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = (ky - 1) * d;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(H, H - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = (kx - 1) * d;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(W, W - dx);
                    double wv[kBlock] = {};
                    for (int b = 0; b < nb; ++b)
                        wv[b] = weights[(static_cast<std::size_t>(ob + b) * blk.in + i) * 9 + ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        const double* __restrict srow = src + static_cast<std::size_t>(y + dy) * W + dx;
                        if (nb == kBlock) {
                            double* __restrict r0 = out.channel(ob) + static_cast<std::size_t>(y) * W;
                            double* __restrict r1 = out.channel(ob + 1) + static_cast<std::size_t>(y) * W;
                            double* __restrict r2 = out.channel(ob + 2) + static_cast<std::size_t>(y) * W;
                            double* __restrict r3 = out.channel(ob + 3) + static_cast<std::size_t>(y) * W;
                            for (int x = x0; x < x1; ++x) {
                                const double v = srow[x];
                                r0[x] += wv[0] * v;
                                r1[x] += wv[1] * v;
                                r2[x] += wv[2] * v;
                                r3[x] += wv[3] * v;
                            }
                        } else {
                            for (int b = 0; b < nb; ++b) {
                                double* __restrict drow = out.channel(ob + b) + static_cast<std::size_t>(y) * W;
                                for (int x = x0; x < x1; ++x) drow[x] += wv[b] * srow[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3x3_backward(const double* weights, const ParamBlock& blk, const Tensor& in, const Tensor& d_out,
                      double* d_weights, double* d_bias, Tensor* d_in)
{
    const int H = in.h;
    const int W = in.w;
    const int d = blk.dilation;
    if (d_in) *d_in = Tensor(blk.in, H, W);
    for (int o = 0; o < blk.out; ++o) {
        const double* g = d_out.channel(o);
        if (d_bias) {
            double s = 0.0;
            for (std::size_t p = 0; p < d_out.plane(); ++p) s += g[p];
            d_bias[o] += s;
        }
        for (int i = 0; i < blk.in; ++i) {
            const double* src = in.channel(i);
            double* dsrc = d_in ? d_in->channel(i) : nullptr;
            const std::size_t wbase = (static_cast<std::size_t>(o) * blk.in + i) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = (ky - 1) * d;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(H, H - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = (kx - 1) * d;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(W, W - dx);
                    const double wv = weights[wbase + ky * 3 + kx];
                    // Eight interleaved partial sums so the dot product vectorizes
                    // without reassociation flags; the order is still fixed.
                    double part[8] = {};
                    for (int y = y0; y < y1; ++y) {
                        const double* __restrict grow = g + static_cast<std::size_t>(y) * W;
                        const double* __restrict srow = src + static_cast<std::size_t>(y + dy) * W + dx;
                        int x = x0;
                        for (; x + 8 <= x1; x += 8)
                            for (int u = 0; u < 8; ++u) part[u] += grow[x + u] * srow[x + u];
                        for (; x < x1; ++x) part[x & 7] += grow[x] * srow[x];
                        if (dsrc) {
                            double* __restrict drow = dsrc + static_cast<std::size_t>(y + dy) * W + dx;
                            for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
                        }
                    }
                    const double acc = ((part[0] + part[1]) + (part[2] + part[3])) +
                                       ((part[4] + part[5]) + (part[6] + part[7]));
                    if (d_weights) d_weights[wbase + ky * 3 + kx] += acc;
                }
            }
        }
    }
}

void head_forward(const double* weights, const double* bias, const ParamBlock& blk, const Tensor& in, Tensor& out)
{
    out = Tensor(blk.out, in.h, in.w);
    const std::size_t P = in.plane();
    for (int o = 0; o < blk.out; ++o) {
        double* dst = out.channel(o);
        std::fill(dst, dst + P, bias[o]);
        for (int i = 0; i < blk.in; ++i) {
            const double wv = weights[static_cast<std::size_t>(o) * blk.in + i];
            const double* src = in.channel(i);
            for (std::size_t p = 0; p < P; ++p) dst[p] += wv * src[p];
        }
    }
}

}  // namespace

ForwardTrace forward_trace(const ConvNetParams& params, const Grid& input)
{
    check_params(params);
    if (input.channels() != params.arch.in_channels)
        throw DimensionError("input has " + std::to_string(input.channels()) + " channels, network expects " +
                             std::to_string(params.arch.in_channels));
    for (double v : input.values())
        if (!std::isfinite(v)) throw ValidationError("network input must be finite");
    const auto blocks = param_blocks(params.arch);
    ForwardTrace tr;
    tr.input = Tensor::from_grid(input);
    const double* P = params.values.data();
    const Tensor* cur = &tr.input;
    tr.pre.resize(blocks.size() - 1);
    tr.post.resize(blocks.size() - 1);
    for (std::size_t l = 0; l + 1 < blocks.size(); ++l) {
        conv3x3_forward(P + blocks[l].weight_offset, P + blocks[l].bias_offset, blocks[l], *cur, tr.pre[l]);
        tr.post[l] = tr.pre[l];
        for (double& v : tr.post[l].data) v = v > 0.0 ? v : 0.0;
        cur = &tr.post[l];
    }
    const auto& head = blocks.back();
    head_forward(P + head.weight_offset, P + head.bias_offset, head, *cur, tr.output);
    return tr;
}

Tensor forward_raw(const ConvNetParams& params, const Grid& input) { return forward_trace(params, input).output; }

std::vector<double> backward(const ConvNetParams& params, const ForwardTrace& tr, const Tensor& d_output,
                             const std::vector<bool>& frozen)
{
    check_params(params);
    const auto blocks = param_blocks(params.arch);
    if (d_output.c != params.arch.out_channels || d_output.h != tr.output.h || d_output.w != tr.output.w)
        throw DimensionError("upstream gradient shape does not match the network output");
    auto is_frozen = [&](std::size_t b) { return b < frozen.size() && frozen[b]; };

    std::vector<double> grad(params.values.size(), 0.0);
    const double* P = params.values.data();
    const std::size_t L = blocks.size() - 1;
    const auto& head = blocks.back();
    const Tensor& feat = L > 0 ? tr.post[L - 1] : tr.input;
    const std::size_t plane = feat.plane();

    // Head: out[o][p] = b[o] + sum_i W[o][i] feat[i][p].
    Tensor d_feat(feat.c, feat.h, feat.w);
    for (int o = 0; o < head.out; ++o) {
        const double* g = d_output.channel(o);
        if (!is_frozen(L)) {
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += g[p];
            grad[head.bias_offset + o] += s;
        }
        for (int i = 0; i < head.in; ++i) {
            const double* src = feat.channel(i);
            const double wv = P[head.weight_offset + static_cast<std::size_t>(o) * head.in + i];
            double* dsrc = d_feat.channel(i);
            double acc = 0.0;
            for (std::size_t p = 0; p < plane; ++p) {
                acc += g[p] * src[p];
                dsrc[p] += wv * g[p];
            }
            if (!is_frozen(L)) grad[head.weight_offset + static_cast<std::size_t>(o) * head.in + i] += acc;
        }
    }

    Tensor d_post = std::move(d_feat);
    for (std::size_t l = L; l-- > 0;) {
        // ReLU.
        Tensor d_pre = std::move(d_post);
        const auto& z = tr.pre[l].data;
        for (std::size_t k = 0; k < z.size(); ++k)
            if (!(z[k] > 0.0)) d_pre.data[k] = 0.0;
        const Tensor& in = l > 0 ? tr.post[l - 1] : tr.input;
        Tensor d_in;
        const bool frz = is_frozen(l);
        conv3x3_backward(P + blocks[l].weight_offset, blocks[l], in, d_pre,
                         frz ? nullptr : grad.data() + blocks[l].weight_offset,
                         frz ? nullptr : grad.data() + blocks[l].bias_offset, l > 0 ? &d_in : nullptr);
        d_post = std::move(d_in);
    }
    return grad;
}

CmpppOutputs split_outputs(const Tensor& out, double size_unit)
{
    if (out.c < 4) throw DimensionError("CMPPP head needs at least 4 output channels");
    const int H = out.h;
    const int W = out.w;
    const int C = out.c - 3;
    Grid L(H, W, 1);
    Grid B(H, W, 2);
    Grid Cl(H, W, C);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * W + j;
            L(i, j) = out.data[p];
            B(i, j, 0) = size_unit * out.data[out.plane() + p];
            B(i, j, 1) = size_unit * out.data[2 * out.plane() + p];
            for (int k = 0; k < C; ++k) Cl(i, j, k) = out.data[(3 + k) * out.plane() + p];
        }
    for (double v : L.values())
        if (!std::isfinite(v)) throw NumericError("network produced a non-finite log-intensity");
    return {IntensityField(std::move(L)), MarkMaps{std::move(B), std::move(Cl)}};
}

Tensor merge_gradients(const NllGradients& g, double size_unit)
{
    const int H = g.d_log_intensity.h_px();
    const int W = g.d_log_intensity.w_px();
    const int C = g.d_c.channels();
    Tensor t(3 + C, H, W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * W + j;
            t.data[p] = g.d_log_intensity(i, j);
            t.data[t.plane() + p] = size_unit * g.d_b(i, j, 0);
            t.data[2 * t.plane() + p] = size_unit * g.d_b(i, j, 1);
            for (int k = 0; k < C; ++k) t.data[(3 + k) * t.plane() + p] = g.d_c(i, j, k);
        }
    return t;
}

CmpppOutputs forward(const ConvNetParams& params, const Grid& input)
{
    return split_outputs(forward_raw(params, input), params.arch.size_unit);
}

std::vector<double> backward(const ConvNetParams& params, const Grid& input, const NllGradients& upstream,
                             const std::vector<bool>& frozen)
{
    const ForwardTrace tr = forward_trace(params, input);
    return backward(params, tr, merge_gradients(upstream, params.arch.size_unit), frozen);
}

std::string to_string(ModelType t) { return t == ModelType::Cmppp ? "cmppp" : "occupancy"; }

ModelType model_type_from_string(const std::string& s)
{
    if (s == "cmppp") return ModelType::Cmppp;
    if (s == "occupancy") return ModelType::Occupancy;
    throw ValidationError("unknown model type '" + s + "' (expected cmppp|occupancy)");
}

OrderedJson Checkpoint::metadata() const
{
    OrderedJson j;
    j["format"] = kCheckpointMagic;
    j["model"] = to_string(model_type);
    j["architecture"] = params.arch.to_json();
    j["num_classes"] = num_classes;
    j["residual_kind"] = to_string(residual.kind);
    j["sigma"] = residual.sigma;
    j["rng_algorithm"] = rng_algorithm;
    j["seed"] = seed;
    j["num_params"] = params.values.size();
    j["dtype"] = "f64";
    j["endian"] = "little";
    j["train"] = extra;
    return j;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    check_params(ckpt.params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out << kCheckpointMagic << '\n' << ckpt.metadata().dump() << '\n';
    out.write(reinterpret_cast<const char*>(ckpt.params.values.data()),
              static_cast<std::streamsize>(ckpt.params.values.size() * sizeof(double)));
    if (!out) throw ValidationError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path_in)
{
    std::filesystem::path path = path_in;
    if (std::filesystem::is_directory(path)) path /= kCheckpointFileName;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    std::string magic;
    std::string line;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw FormatError(path.string() + ": not a checkpoint file");
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing checkpoint metadata");
    Json meta;
    try {
        meta = Json::parse(line);
    } catch (const Json::exception&) {
        throw FormatError(path.string() + ": malformed checkpoint metadata");
    }
    Checkpoint ck;
    try {
        ck.model_type = model_type_from_string(meta.at("model").get<std::string>());
        ck.params.arch = ConvNetArch::from_json(meta.at("architecture"));
        ck.num_classes = meta.at("num_classes").get<int>();
        ck.residual.kind = residual_kind_from_string(meta.at("residual_kind").get<std::string>());
        ck.residual.sigma = meta.at("sigma").get<double>();
        ck.rng_algorithm = meta.at("rng_algorithm").get<std::string>();
        ck.seed = meta.at("seed").get<std::uint64_t>();
        if (meta.contains("train")) ck.extra = meta["train"];
        const auto n = meta.at("num_params").get<std::size_t>();
        if (n != ck.params.arch.num_params())
            throw FormatError(path.string() + ": parameter count disagrees with architecture");
        ck.params.values.resize(n);
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": incomplete checkpoint metadata (" + e.what() + ")");
    }
    in.read(reinterpret_cast<char*>(ck.params.values.data()),
            static_cast<std::streamsize>(ck.params.values.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != ck.params.values.size() * sizeof(double))
        throw FormatError(path.string() + ": truncated parameter payload");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
    return ck;
}

}  // namespace cmppp
