#include "cmppp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "cmppp/parallel.hpp"

namespace cmppp {

namespace {

// Logit margin of the dominant class in the true class field; the other
// classes then carry probability ~1e-13.
constexpr double kClassLogitGap = 30.0;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_to_f32(Grid& g)
{
    for (double& v : g.values()) v = to_f32(v);
}

// Fraction of pixel cell (i, j) covered by the box [x0,x1] x [y0,y1].
void paint_box(Grid& canvas, double x0, double y0, double x1, double y1, const std::array<double, 3>& color)
{
    const int H = canvas.h_px();
    const int W = canvas.w_px();
    const int j0 = std::max(0, static_cast<int>(std::floor(x0 * W)));
    const int j1 = std::min(W - 1, static_cast<int>(std::floor(x1 * W)));
    const int i0 = std::max(0, static_cast<int>(std::floor(y0 * H)));
    const int i1 = std::min(H - 1, static_cast<int>(std::floor(y1 * H)));
    for (int i = i0; i <= i1; ++i) {
        const double oy = std::max(0.0, std::min(y1, (i + 1.0) / H) - std::max(y0, static_cast<double>(i) / H)) * H;
        if (oy <= 0.0) continue;
        for (int j = j0; j <= j1; ++j) {
            const double ox =
                std::max(0.0, std::min(x1, (j + 1.0) / W) - std::max(x0, static_cast<double>(j) / W)) * W;
            const double cov = ox * oy;
            if (cov <= 0.0) continue;
            for (int c = 0; c < 3; ++c) canvas(i, j, c) = color[c] * cov + canvas(i, j, c) * (1.0 - cov);
        }
    }
}

}  // namespace

std::vector<ClassPrior> SceneSpec::default_classes()
{
    return {
        {0.09, 0.09, {0.90, 0.20, 0.15}},
        {0.16, 0.10, {0.15, 0.85, 0.25}},
        {0.22, 0.20, {0.20, 0.30, 0.95}},
    };
}

void SceneSpec::validate() const
{
    if (h_px < 1 || w_px < 1) throw ValidationError("scene size must be positive");
    if (!(mean_count > 0.0)) throw ValidationError("mean object count must be > 0");
    if (classes.empty()) throw ValidationError("scene spec needs at least one class");
    for (const auto& c : classes)
        if (!(c.mean_w > 0.0) || !(c.mean_h > 0.0)) throw ValidationError("class size means must be > 0");
    if (!(size_scale > 0.0)) throw ValidationError("size_scale must be > 0");
    if (min_bumps < 1 || max_bumps < min_bumps) throw ValidationError("bad bump count range");
    if (!(bump_width_min > 0.0) || bump_width_max < bump_width_min) throw ValidationError("bad bump width range");
    if (bump_amp_max < bump_amp_min) throw ValidationError("bad bump amplitude range");
    if (noise_std < 0.0 || clutter < 0.0 || texture_amplitude < 0.0) throw ValidationError("negative noise/clutter");
}

OrderedJson SceneSpec::to_json() const
{
    OrderedJson j;
    j["h"] = h_px;
    j["w"] = w_px;
    j["mean_count"] = mean_count;
    j["classes"] = OrderedJson::array();
    for (const auto& c : classes) {
        OrderedJson q;
        q["mean_w"] = c.mean_w;
        q["mean_h"] = c.mean_h;
        q["color"] = c.color;
        j["classes"].push_back(q);
    }
    j["size_scale"] = size_scale;
    j["min_bumps"] = min_bumps;
    j["max_bumps"] = max_bumps;
    j["bump_width_min"] = bump_width_min;
    j["bump_width_max"] = bump_width_max;
    j["bump_amp_min"] = bump_amp_min;
    j["bump_amp_max"] = bump_amp_max;
    j["background"] = background;
    j["texture_amplitude"] = texture_amplitude;
    j["texture_frequency"] = texture_frequency;
    j["noise_std"] = noise_std;
    j["clutter"] = clutter;
    j["seed"] = seed;
    return j;
}

SceneSpec SceneSpec::from_json(const Json& j)
{
    SceneSpec s;
    try {
        s.h_px = j.value("h", s.h_px);
        s.w_px = j.value("w", s.w_px);
        s.mean_count = j.value("mean_count", s.mean_count);
        if (j.contains("classes")) {
            s.classes.clear();
            for (const auto& q : j["classes"]) {
                ClassPrior c;
                c.mean_w = q.at("mean_w").get<double>();
                c.mean_h = q.at("mean_h").get<double>();
                if (q.contains("color")) c.color = q["color"].get<std::array<double, 3>>();
                s.classes.push_back(c);
            }
        } else if (j.contains("num_classes")) {
            const int n = j["num_classes"].get<int>();
            auto defaults = default_classes();
            s.classes.clear();
            for (int k = 0; k < n; ++k) {
                ClassPrior c = defaults[k % defaults.size()];
                const double hue = 2.0 * std::numbers::pi * k / std::max(1, n);
                c.color = {0.55 + 0.4 * std::cos(hue), 0.55 + 0.4 * std::cos(hue - 2.094),
                           0.55 + 0.4 * std::cos(hue + 2.094)};
                s.classes.push_back(c);
            }
        }
        s.size_scale = j.value("size_scale", s.size_scale);
        s.min_bumps = j.value("min_bumps", s.min_bumps);
        s.max_bumps = j.value("max_bumps", s.max_bumps);
        s.bump_width_min = j.value("bump_width_min", s.bump_width_min);
        s.bump_width_max = j.value("bump_width_max", s.bump_width_max);
        s.bump_amp_min = j.value("bump_amp_min", s.bump_amp_min);
        s.bump_amp_max = j.value("bump_amp_max", s.bump_amp_max);
        s.background = j.value("background", s.background);
        s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
        s.texture_frequency = j.value("texture_frequency", s.texture_frequency);
        s.noise_std = j.value("noise_std", s.noise_std);
        s.clutter = j.value("clutter", s.clutter);
        s.seed = j.value("seed", s.seed);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("bad scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

Scene generate_scene(const SceneSpec& spec, Rng& rng, const std::string& image_id)
{
    spec.validate();
    const int H = spec.h_px;
    const int W = spec.w_px;
    const int C = spec.num_classes();

    struct Bump {
        double x, y, width, amp;
        int cls;
    };
    const int K = spec.min_bumps + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_bumps - spec.min_bumps + 1)));
    std::vector<Bump> bumps(K);
    for (auto& b : bumps) {
        b.x = rng.uniform();
        b.y = rng.uniform();
        b.width = rng.uniform(spec.bump_width_min, spec.bump_width_max);
        b.amp = rng.uniform(spec.bump_amp_min, spec.bump_amp_max);
        b.cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
    }

    Grid L(H, W, 1);
    std::vector<int> dominant(static_cast<std::size_t>(H) * W, 0);
    double raw_mass = 0.0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double x = (j + 0.5) / W;
            const double y = (i + 0.5) / H;
            double sum = 0.0;
            double best = -1.0;
            for (const auto& b : bumps) {
                const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
                const double v = b.amp * std::exp(-0.5 * d2 / (b.width * b.width));
                sum += v;
                if (v > best) {
                    best = v;
                    dominant[static_cast<std::size_t>(i) * W + j] = b.cls;
                }
            }
            L(i, j) = sum;
            raw_mass += std::exp(sum);
        }
    raw_mass /= static_cast<double>(H) * W;
    const double shift = std::log(spec.mean_count) - std::log(raw_mass);
    for (double& v : L.values()) v += shift;
    round_to_f32(L);

    Grid B(H, W, 2);
    Grid logits(H, W, C, 0.0);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const int k = dominant[static_cast<std::size_t>(i) * W + j];
            B(i, j, 0) = spec.classes[k].mean_w;
            B(i, j, 1) = spec.classes[k].mean_h;
            logits(i, j, k) = kClassLogitGap;
        }
    round_to_f32(B);
    round_to_f32(logits);

    Scene scene;
    scene.true_field = IntensityField(std::move(L));
    scene.true_maps = MarkMaps{std::move(B), std::move(logits)};
    scene.gt = PoissonSampler(scene.true_field).sample(rng);
    scene.gt.image_id = image_id;
    const ResidualModel residual = spec.true_residual();
    for (auto& p : scene.gt.points) {
        const PixelIndex px = pixel_of(p.x, p.y, H, W);
        const SampledMark m =
            sample_mark(residual, scene.true_maps.size_at(px.i, px.j), scene.true_maps.logits_at(px.i, px.j), rng);
        p.w = std::max(0.0, m.w);
        p.h = std::max(0.0, m.h);
        p.class_id = m.class_id;
    }

    // Rendering.
    Grid canvas(H, W, 3);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = spec.texture_frequency * rng.uniform(0.7, 1.3);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double x = (j + 0.5) / W;
            const double y = (i + 0.5) / H;
            const double t = spec.texture_amplitude *
                             std::sin(2.0 * std::numbers::pi * freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
            for (int c = 0; c < 3; ++c) canvas(i, j, c) = spec.background + t;
        }
    const std::uint64_t n_clutter = spec.clutter > 0.0 ? rng.poisson(spec.clutter) : 0;
    for (std::uint64_t k = 0; k < n_clutter; ++k) {
        const double cx = rng.uniform();
        const double cy = rng.uniform();
        const double w = rng.uniform(0.04, 0.16);
        const double h = rng.uniform(0.04, 0.16);
        const double g = rng.uniform(0.15, 0.85);
        paint_box(canvas, cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, {g, g, g});
    }
    for (const auto& p : scene.gt.points)
        paint_box(canvas, p.x - 0.5 * p.w, p.y - 0.5 * p.h, p.x + 0.5 * p.w, p.y + 0.5 * p.h,
                  spec.classes[p.class_id].color);
    if (spec.noise_std > 0.0)
        for (double& v : canvas.values()) v += spec.noise_std * rng.normal();
    round_to_f32(canvas);
    scene.input = std::move(canvas);
    return scene;
}

std::string image_id_for(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%05zu", index);
    return buf;
}

Scene generate_indexed_scene(const SceneSpec& spec, std::size_t index)
{
    Rng rng(spec.seed, index);
    return generate_scene(spec, rng, image_id_for(index));
}

double Dataset::mean_count() const
{
    if (items.empty()) return 0.0;
    double n = 0.0;
    for (const auto& it : items) n += static_cast<double>(it.gt.size());
    return n / static_cast<double>(items.size());
}

Dataset make_dataset(const SceneSpec& spec, std::size_t n, std::size_t first, int threads)
{
    spec.validate();
    Dataset ds;
    ds.num_classes = spec.num_classes();
    ds.true_residual = spec.true_residual();
    ds.manifest["spec"] = spec.to_json();
    ds.items.resize(n);
    parallel_for(n, threads, [&](std::size_t k) {
        Scene s = generate_indexed_scene(spec, first + k);
        auto& it = ds.items[k];
        it.id = s.gt.image_id;
        it.input = std::move(s.input);
        it.gt = std::move(s.gt);
        it.true_field = std::move(s.true_field);
        it.true_maps = std::move(s.true_maps);
    });
    return ds;
}

namespace {

Grid concat_marks(const MarkMaps& m)
{
    const int H = m.b.h_px();
    const int W = m.b.w_px();
    const int C = m.c.channels();
    Grid g(H, W, 2 + C);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            g(i, j, 0) = m.b(i, j, 0);
            g(i, j, 1) = m.b(i, j, 1);
            for (int k = 0; k < C; ++k) g(i, j, 2 + k) = m.c(i, j, k);
        }
    return g;
}

MarkMaps split_marks(const Grid& g)
{
    if (g.channels() < 3) throw FormatError("mark grid needs 2 + |C| channels");
    const int H = g.h_px();
    const int W = g.w_px();
    const int C = g.channels() - 2;
    MarkMaps m{Grid(H, W, 2), Grid(H, W, C)};
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            m.b(i, j, 0) = g(i, j, 0);
            m.b(i, j, 1) = g(i, j, 1);
            for (int k = 0; k < C; ++k) m.c(i, j, k) = g(i, j, 2 + k);
        }
    return m;
}

}  // namespace

OrderedJson generate_dataset(const SceneSpec& spec, std::size_t n, const std::filesystem::path& out_dir, int threads)
{
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw ValidationError("cannot create dataset directory " + out_dir.string());

    OrderedJson manifest;
    manifest["format"] = "cmppp-dataset-v1";
    manifest["num_images"] = n;
    manifest["num_classes"] = spec.num_classes();
    OrderedJson residual;
    residual["kind"] = to_string(spec.true_residual().kind);
    residual["sigma"] = spec.true_residual().sigma;
    manifest["true_residual"] = residual;
    OrderedJson rng;
    rng["algorithm"] = RngStream::kAlgorithmId;
    rng["seed"] = spec.seed;
    rng["stream"] = "image index";
    manifest["rng"] = rng;
    manifest["spec"] = spec.to_json();
    manifest["images"] = OrderedJson::array();

    std::vector<OrderedJson> entries(n);
    parallel_for(n, threads, [&](std::size_t k) {
        const Scene s = generate_indexed_scene(spec, k);
        const std::string id = s.gt.image_id;
        OrderedJson e;
        e["id"] = id;
        e["input"] = id + ".grid";
        e["gt"] = id + ".json";
        e["true_intensity"] = id + ".intensity.grid";
        e["true_marks"] = id + ".marks.grid";
        write_grid(s.input, out_dir / (id + ".grid"));
        write_config(s.gt, out_dir / (id + ".json"));
        write_grid(s.true_field.log_intensity(), out_dir / (id + ".intensity.grid"));
        write_grid(concat_marks(s.true_maps), out_dir / (id + ".marks.grid"));
        entries[k] = std::move(e);
    });
    for (auto& e : entries) manifest["images"].push_back(std::move(e));
    write_text(out_dir / kManifestName, manifest.dump(1) + "\n");
    return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir, bool load_truth)
{
    const auto manifest_path = dir / kManifestName;
    if (!std::filesystem::exists(manifest_path))
        throw ValidationError("no " + std::string(kManifestName) + " in " + dir.string());
    const Json m = read_json(manifest_path);
    Dataset ds;
    ds.manifest = OrderedJson::parse(m.dump());
    try {
        ds.num_classes = m.at("num_classes").get<int>();
        if (m.contains("true_residual")) {
            ResidualModel r;
            r.kind = residual_kind_from_string(m["true_residual"].at("kind").get<std::string>());
            r.sigma = m["true_residual"].at("sigma").get<double>();
            ds.true_residual = r;
        }
        for (const auto& e : m.at("images")) {
            DatasetItem it;
            it.id = e.at("id").get<std::string>();
            it.input = read_grid(dir / e.at("input").get<std::string>());
            it.gt = read_config(dir / e.at("gt").get<std::string>());
            validate_ground_truth(it.gt, ds.num_classes);
            if (load_truth && e.contains("true_intensity") && e.contains("true_marks")) {
                it.true_field = IntensityField(read_grid(dir / e["true_intensity"].get<std::string>()));
                it.true_maps = split_marks(read_grid(dir / e["true_marks"].get<std::string>()));
            }
            ds.items.push_back(std::move(it));
        }
    } catch (const Json::exception& e) {
        throw FormatError(manifest_path.string() + ": malformed manifest (" + e.what() + ")");
    }
    return ds;
}

Dataset subset(const Dataset& ds, std::size_t first, std::size_t last)
{
    Dataset out;
    out.manifest = ds.manifest;
    out.num_classes = ds.num_classes;
    out.true_residual = ds.true_residual;
    last = std::min(last, ds.items.size());
    for (std::size_t k = first; k < last; ++k) out.items.push_back(ds.items[k]);
    return out;
}

}  // namespace cmppp
