// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 1 4 7      run a subset
//
// CMPPP_ACCEPT_CACHE=<dir> keeps the trained models of criteria 6, 9 and 10
// between runs; the runtime bound of criterion 6 is not judged when the
// models come from the cache.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <vector>

#include "cmppp/calibrate.hpp"
#include "cmppp/convnet.hpp"
#include "cmppp/eval.hpp"
#include "cmppp/io.hpp"
#include "cmppp/nll.hpp"
#include "cmppp/pointprocess.hpp"
#include "cmppp/synth.hpp"
#include "cmppp/train.hpp"

using namespace cmppp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int threads()
{
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

struct Outcome {
    bool pass = false;
    std::string detail;
    // Wall-clock bound in seconds; <= 0 means unbounded.
    double limit = 0.0;
    // Set when the work the bound refers to was skipped (cached model).
    bool timing_skipped = false;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...)
{
    std::array<char, 1024> buf;
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf.data(), buf.size(), f, ap);
    va_end(ap);
    return buf.data();
}

fs::path tmp_dir(const std::string& name)
{
    const fs::path p = fs::path(CMPPP_TEST_TMP) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Sum of exp(L) over pixels whose centers lie in A, divided by H W.
double oracle_mass(const IntensityField& f, const TestRegion& A)
{
    const int H = f.h_px(), W = f.w_px();
    double s = 0.0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double x = (j + 0.5) / W, y = (i + 0.5) / H;
            if (x >= A.x0() && x <= A.x0() + A.rw && y >= A.y0() && y <= A.y0() + A.rh)
                s += std::exp(f.log_intensity()(i, j));
        }
    return s / (H * W);
}

IntensityField random_field(Rng& rng, int H, int W, double lo, double hi)
{
    Grid L(H, W, 1);
    for (double& v : L.values()) v = rng.uniform(lo, hi);
    return IntensityField(std::move(L));
}

IntensityField shifted(const IntensityField& f, double c)
{
    Grid L = f.log_intensity();
    for (double& v : L.values()) v += c;
    return IntensityField(std::move(L));
}

// ---------------------------------------------------------------------------

Outcome c1_poisson_void()
{
    const int H = 16, W = 16, n = 100000;
    Rng rng(101, 0);
    const auto base = random_field(rng, H, W, -1.0, 1.0);
    // Cell-aligned: rows 3..10, columns 2..12.
    const TestRegion A = TestRegion::from_corners(2.0 / W, 3.0 / H, 13.0 / W, 11.0 / H);
    Outcome o{true, "", 30.0};
    for (double target : {0.5, 1.0, 5.0}) {
        const auto f = shifted(base, std::log(target / oracle_mass(base, A)));
        const double lam = oracle_mass(f, A);
        const PoissonSampler sampler(f);
        std::size_t empty = 0;
        for (int s = 0; s < n; ++s) {
            const auto cfg = sampler.sample(rng);
            bool any = false;
            for (const auto& p : cfg.points)
                any = any || (p.x >= A.x0() && p.x <= A.x0() + A.rw && p.y >= A.y0() && p.y <= A.y0() + A.rh);
            empty += !any;
        }
        const double p = std::exp(-lam), phat = static_cast<double>(empty) / n;
        const double se = std::sqrt(p * (1.0 - p) / n);
        const double z = (phat - p) / se;
        o.pass = o.pass && std::fabs(z) <= 3.0;
        o.detail += fmt("L=%.1f: %.5f vs %.5f (z %+.2f)  ", lam, phat, p, z);
    }
    return o;
}

Outcome c2_rn_derivative()
{
    const int H = 16, W = 16, n = 100000;
    Rng rng(102, 0);
    const auto base = random_field(rng, H, W, -1.5, 1.0);
    const auto f = shifted(base, std::log(1.5 / oracle_mass(base, {0.5, 0.5, 1.0, 1.0})));
    const double mass = oracle_mass(f, {0.5, 0.5, 1.0, 1.0});
    double sum = 0.0, sum2 = 0.0, worst_formula = 0.0;
    for (int s = 0; s < n; ++s) {
        // Unit-rate homogeneous process on the unit square.
        MarkedPointConfig cfg;
        const auto k = rng.poisson(1.0);
        for (std::uint64_t t = 0; t < k; ++t) cfg.points.push_back({rng.uniform(), rng.uniform(), 0.0, 0.0, 0});
        const double lr = log_rn_derivative(f, cfg);
        if (s < 1000) {
            double ref = -(mass - 1.0);
            for (const auto& p : cfg.points) {
                const int i = std::min(H - 1, static_cast<int>(p.y * H)), j = std::min(W - 1, static_cast<int>(p.x * W));
                ref += f.log_intensity()(i, j);
            }
            worst_formula = std::max(worst_formula, std::fabs(lr - ref));
        }
        const double r = std::exp(lr);
        sum += r;
        sum2 += r * r;
    }
    const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
    Outcome o{std::fabs(mean - 1.0) <= 0.02 && mass <= 2.0 && worst_formula <= 1e-9, "", 60.0};
    o.detail = fmt("mean %.4f (se %.4f), total mass %.3f, formula gap %.1e", mean, se, mass, worst_formula);
    return o;
}

Outcome c3_gradient_check()
{
    const auto arch = ConvNetArch::cmppp(3, 10);
    Outcome o{arch.num_params() <= 5000, "", 300.0};
    Rng rng(103, 0);
    double worst = 0.0;
    std::size_t probed = 0, skipped = 0;
    const double h = 1e-5;
    for (int inst = 0; inst < 20; ++inst) {
        auto p = init_params(rng, arch, {3.0, 0.15, 0.15});
        for (double& v : p.values) v += 0.05 * rng.normal();
        Grid x(8, 8, 3);
        for (double& v : x.values()) v = rng.uniform();
        MarkedPointConfig gt{"fd", {}};
        const int npts = 1 + static_cast<int>(rng.below(4));
        for (int k = 0; k < npts; ++k)
            gt.points.push_back({rng.uniform(), rng.uniform(), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4),
                                 static_cast<int>(rng.below(3))});
        const ResidualModel model{inst % 2 ? ResidualKind::Gaussian : ResidualKind::Laplace, rng.uniform(0.1, 0.5)};

        // Loss plus the signature of every kink it passes through: ReLU
        // signs and, for the Laplace term, residual signs.
        auto eval = [&](const ConvNetParams& q, std::vector<char>* sig) {
            const auto tr = forward_trace(q, x);
            const auto out = split_outputs(tr.output, q.arch.size_unit);
            if (sig) {
                sig->clear();
                for (const auto& t : tr.pre)
                    for (double v : t.data) sig->push_back(v > 0.0);
                for (const auto& g : gt.points) {
                    const auto c = pixel_of(g.x, g.y, 8, 8);
                    sig->push_back(g.w > out.maps.b(c.i, c.j, 0));
                    sig->push_back(g.h > out.maps.b(c.i, c.j, 1));
                }
            }
            return cmppp_nll(out.field, out.maps, model, gt).total;
        };
        const auto o0 = forward(p, x);
        const auto grad = backward(p, x, nll_grad(o0.field, o0.maps, model, gt));
        std::vector<char> base, sa, sb;
        eval(p, &base);
        for (std::size_t k = 0; k < p.values.size(); ++k) {
            ConvNetParams a = p, b = p;
            a.values[k] += h;
            b.values[k] -= h;
            const double la = eval(a, &sa), lb = eval(b, &sb);
            if (sa != base || sb != base) {
                ++skipped;
                continue;
            }
            const double fd = (la - lb) / (2.0 * h);
            const double err = std::fabs(fd - grad[k]) / std::max({std::fabs(fd), std::fabs(grad[k]), 1e-3});
            worst = std::max(worst, err);
            ++probed;
        }
    }
    o.pass = o.pass && worst <= 1e-4 && probed > 20 * arch.num_params() / 2;
    o.detail = fmt("%zu params, %zu probes over 20 instances (%zu across a kink skipped), max rel err %.2e",
                   arch.num_params(), probed, skipped, worst);
    return o;
}

Outcome c4_void_vs_mc()
{
    const int H = 16, W = 16, scenes = 100, n = 10000;
    Rng rng(104, 0);
    int agree = 0;
    double worst_z = 0.0;
    for (int s = 0; s < scenes; ++s) {
        const auto f = random_field(rng, H, W, -1.5, 1.0);
        MarkMaps m{Grid(H, W, 2), Grid(H, W, 2)};
        for (double& v : m.b.values()) v = rng.uniform(0.03, 0.25);
        const ResidualModel model{s % 2 ? ResidualKind::Gaussian : ResidualKind::Laplace, rng.uniform(0.01, 0.06)};
        const TestRegion A{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.05, 0.3),
                           rng.uniform(0.05, 0.3)};
        const double p = box_void_probability(f, m, model, A);

        std::vector<double> mean(H * W), e(H * W);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                mean[i * W + j] = std::exp(f.log_intensity()(i, j)) / (H * W);
                e[i * W + j] = std::exp(-mean[i * W + j]);
            }
        auto residual = [&]() { return model.kind == ResidualKind::Laplace ? rng.laplace(0.0, model.sigma) : model.sigma * rng.normal(); };
        int free = 0;
        for (int t = 0; t < n; ++t) {
            bool hit = false;
            for (int i = 0; i < H && !hit; ++i)
                for (int j = 0; j < W && !hit; ++j) {
                    const auto k = rng.poisson_inversion(mean[i * W + j], e[i * W + j]);
                    const double x = (j + 0.5) / W, y = (i + 0.5) / H;
                    for (std::uint64_t c = 0; c < k && !hit; ++c) {
                        const double w = m.b(i, j, 0) + residual(), hh = m.b(i, j, 1) + residual();
                        hit = std::fabs(x - A.cx) <= 0.5 * (A.rw + w) && std::fabs(y - A.cy) <= 0.5 * (A.rh + hh);
                        hit = hit || (std::fabs(x - A.cx) <= 0.5 * A.rw && std::fabs(y - A.cy) <= 0.5 * A.rh);
                    }
                }
            free += !hit;
        }
        const double phat = static_cast<double>(free) / n;
        const double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / n);
        const double z = std::fabs(phat - p) / se;
        worst_z = std::max(worst_z, z);
        agree += z <= 3.0;
    }
    return {agree >= 95, fmt("%d/100 scenes within 3 SE (largest |z| %.2f)", agree, worst_z), 600.0};
}

Outcome c5_true_field_ece()
{
    const SceneSpec spec;
    const Dataset data = make_dataset(spec, 2000, 0, threads());
    Outcome o{true, "", 300.0};
    for (double area : {0.005, 0.01, 0.02})
        for (auto mode : {CalibrationMode::Center, CalibrationMode::Box}) {
            CalibrationOptions opt;
            opt.area_frac = area;
            opt.mode = mode;
            opt.boxes_per_image = 50;
            opt.seed = 5;
            const double ece = calibrate_ppp(VoidSource::truth(), data, opt, threads()).report.ece;
            o.pass = o.pass && ece <= 0.02;
            o.detail += fmt("%s@%.3f %.4f  ", to_string(mode).c_str(), area, ece);
        }
    return o;
}

// Models shared by criteria 6, 9 and 10.
struct Trained {
    Checkpoint cmppp;
    Checkpoint occupancy;
    double seconds = 0.0;
    bool cached = false;
};

const Trained& trained()
{
    static std::optional<Trained> t;
    if (t) return *t;
    t.emplace();
    const char* cache = std::getenv("CMPPP_ACCEPT_CACHE");
    const fs::path dir = cache ? fs::path(cache) : fs::path();
    if (cache && fs::exists(dir / "cmppp.ckpt") && fs::exists(dir / "occupancy.ckpt")) {
        t->cmppp = read_checkpoint(dir / "cmppp.ckpt");
        t->occupancy = read_checkpoint(dir / "occupancy.ckpt");
        t->cached = true;
        return *t;
    }
    const auto start = Clock::now();
    const SceneSpec spec;
    const Dataset train_set = make_dataset(spec, 2000, 0, threads());
    TrainConfig cfg;
    cfg.seed = 11;
    t->cmppp = train(cfg, train_set, threads()).checkpoint;
    cfg.model = ModelType::Occupancy;
    t->occupancy = train(cfg, train_set, threads()).checkpoint;
    t->seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (cache) {
        fs::create_directories(dir);
        write_checkpoint(t->cmppp, dir / "cmppp.ckpt");
        write_checkpoint(t->occupancy, dir / "occupancy.ckpt");
    }
    return *t;
}

const Dataset& held_out()
{
    static const Dataset d = make_dataset(SceneSpec{}, 500, 100000, threads());
    return d;
}

Outcome c6_trained_calibration()
{
    const auto start = Clock::now();
    const Trained& t = trained();
    CalibrationOptions opt;
    opt.area_frac = 0.01;
    opt.seed = 6;
    opt.mode = CalibrationMode::Center;
    const double ece = calibrate_ppp(VoidSource::from(t.cmppp), held_out(), opt, threads()).report.ece;
    const double base = calibrate_ppp(VoidSource::from(t.occupancy), held_out(), opt, threads()).report.ece;
    opt.mode = CalibrationMode::Box;
    const double ece_box = calibrate_ppp(VoidSource::from(t.cmppp), held_out(), opt, threads()).report.ece;
    const double secs = t.cached ? 0.0 : std::chrono::duration<double>(Clock::now() - start).count();
    Outcome o{ece <= 0.05 && base >= 3.0 * ece, "", 1800.0, t.cached};
    o.detail = fmt("CMPPP void ECE %.4f, occupancy baseline %.4f (ratio %.1f); box-overlap ECE %.4f; sigma-hat %.4f",
                   ece, base, base / ece, ece_box, t.cmppp.residual.sigma);
    if (!t.cached) o.detail += fmt("; training %.0f s of %.0f s", t.seconds, secs);
    return o;
}

Outcome c7_area_doubling()
{
    Outcome o{true, ""};
    int checked = 0;
    Rng rng(107, 0);
    std::vector<double> ps{0.5, 0.9, 0.97, 0.999};
    for (int k = 0; k < 20; ++k) ps.push_back(rng.uniform(0.01, 1.0));
    for (double p : ps) {
        const Grid g(32, 32, 1, p);
        for (int rows = 1; rows <= 8; rows += 3)
            for (int cols = 1; cols <= 16; cols += 5) {
                const TestRegion a = TestRegion::from_corners(0.0, 0.0, cols / 32.0, rows / 32.0);
                const TestRegion wide = TestRegion::from_corners(0.0, 0.0, 2 * cols / 32.0, rows / 32.0);
                const TestRegion tall = TestRegion::from_corners(0.0, 0.0, cols / 32.0, 2 * rows / 32.0);
                const double pa = baseline_product_void(g, a);
                o.pass = o.pass && baseline_product_void(g, wide) == pa * pa && baseline_product_void(g, tall) == pa * pa;
                checked += 2;
            }
    }
    o.detail = fmt("%d region pairs over %zu probability levels", checked, ps.size());
    return o;
}

// Regression-term NLL of a residual list, evaluated directly.
double oracle_size_nll(const std::vector<SizePair>& r, ResidualKind kind, double s)
{
    double nll = 0.0;
    for (const auto& q : r)
        for (double v : {q.w, q.h})
            nll += kind == ResidualKind::Laplace ? std::log(2.0 * s) + std::fabs(v) / s
                                                 : 0.5 * std::log(2.0 * M_PI * s * s) + 0.5 * v * v / (s * s);
    return nll;
}

Outcome c8_sigma_optimality()
{
    Outcome o{true, ""};
    int wins = 0;
    for (int d = 0; d < 10; ++d) {
        Rng rng(108, d);
        const int H = 32, W = 32;
        const auto f = random_field(rng, H, W, -1.0, 1.0);
        MarkMaps m{Grid(H, W, 2), Grid(H, W, 3)};
        for (double& v : m.b.values()) v = rng.uniform(0.05, 0.3);
        for (double& v : m.c.values()) v = rng.normal();
        const auto kind = d % 2 ? ResidualKind::Gaussian : ResidualKind::Laplace;
        const double true_s = rng.uniform(0.005, 0.05);
        MarkedPointConfig gt{"s", {}};
        for (int k = 0; k < 40; ++k) {
            const double x = rng.uniform(), y = rng.uniform();
            const auto c = pixel_of(x, y, H, W);
            auto draw = [&](double b) { return b + (kind == ResidualKind::Laplace ? rng.laplace(0.0, true_s) : true_s * rng.normal()); };
            gt.points.push_back({x, y, draw(m.b(c.i, c.j, 0)), draw(m.b(c.i, c.j, 1)), static_cast<int>(rng.below(3))});
        }
        std::vector<SizePair> res;
        collect_residuals(m, gt, res);
        const double s = estimate_sigma(res, kind);
        bool best = true;
        for (int k = -3; k <= 3; ++k) {
            if (k == 0) continue;
            const double alt = s * std::ldexp(1.0, k);
            best = best && oracle_size_nll(res, kind, s) < oracle_size_nll(res, kind, alt) &&
                   cmppp_nll(f, m, {kind, s}, gt).total < cmppp_nll(f, m, {kind, alt}, gt).total;
        }
        wins += best;
    }
    o.pass = wins == 10;
    o.detail = fmt("sigma-hat optimal on %d/10 datasets", wins);
    return o;
}

Outcome c9_crop_ablation()
{
    const Trained& t = trained();
    const Dataset v = subset(held_out(), 0, 200);
    const std::vector<int> crops{8, 16, 24, 32, 48, 64};
    const auto rows = crop_ablation(t.cmppp, v, crops, threads());
    std::size_t interior = SIZE_MAX;
    std::string table;
    for (const auto& r : rows) {
        if (r.crop_px != 8 && r.crop_px != 64) interior = std::min(interior, r.fp);
        table += fmt("%d:%zu ", r.crop_px, r.fp);
    }
    const bool pass = rows.front().fp > interior && rows.back().fp > interior;
    Outcome o{pass, fmt("FPs by crop %s(interior min %zu)", table.c_str(), interior)};
    if (!pass) {
        // Where the minimum actually sits.
        const std::vector<int> small{2, 3, 4, 6};
        std::string extra;
        for (const auto& r : crop_ablation(t.cmppp, v, small, threads())) extra += fmt("%d:%zu ", r.crop_px, r.fp);
        o.detail += "; smaller crops " + extra;
    }
    return o;
}

Outcome c10_ap()
{
    const Trained& t = trained();
    const Dataset v = subset(held_out(), 0, 200);
    std::vector<ImageRecord> recs;
    for (const auto& it : v.items) recs.push_back({detect(t.cmppp, it.input, 16, it.id), it.gt});
    const auto rep = average_precision(recs, t.cmppp.num_classes, 0.5);
    return {rep.map >= 0.6, fmt("mAP@0.5 %.4f at crop 16 (tp %zu fp %zu fn %zu)", rep.map, rep.tp, rep.fp, rep.fn)};
}

int shell(const std::string& args)
{
    const std::string cmd = std::string(CMPPP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Every regular file under a and b, compared byte for byte.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files)
{
    std::set<fs::path> names;
    for (const auto& root : {a, b})
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file()) names.insert(fs::relative(e.path(), root));
    files = names.size();
    for (const auto& n : names)
        if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) return false;
    return files > 0;
}

Outcome c11_reproducibility()
{
    const fs::path dir = tmp_dir("repro");
    {
        std::ofstream(dir / "spec.json") << R"({"h_px": 32, "w_px": 32, "mean_count": 3})";
        std::ofstream(dir / "train.json") << R"({"epochs": 2, "batch_size": 4, "width": 8, "seed": 3})";
    }
    bool ok = true;
    std::string detail;
    // Same paths both times (configs echo them); the first run is moved aside.
    const fs::path r = dir / "run";
    for (const char* kept : {"a", "b"}) {
        ok = ok && shell("synth --spec " + (dir / "spec.json").string() + " --n 24 --seed 9 --out " + (r / "data").string()) == 0;
        ok = ok && shell("train --config " + (dir / "train.json").string() + " --data " + (r / "data").string() +
                         " --out " + (r / "model").string()) == 0;
        ok = ok && shell("calibrate --source " + (r / "model" / "model.ckpt").string() + " --data " +
                         (r / "data").string() + " --area 0.02 --seed 4 --out " + (r / "calib").string()) == 0;
        if (ok) fs::rename(r, dir / kept);
    }
    if (!ok) return {false, "a CLI step exited non-zero"};
    for (const char* sub : {"data", "model", "calib"}) {
        std::size_t files = 0;
        const bool same = same_tree(dir / "a" / sub, dir / "b" / sub, files);
        ok = ok && same;
        detail += fmt("%s %s (%zu files)  ", sub, same ? "identical" : "DIFFERENT", files);
    }
    return {ok, detail};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> all{
        {1, "poisson void probability", c1_poisson_void},
        {2, "radon-nikodym normalization", c2_rn_derivative},
        {3, "full-chain gradient check", c3_gradient_check},
        {4, "box void vs monte carlo", c4_void_vs_mc},
        {5, "true-field calibration", c5_true_field_ece},
        {6, "trained calibration vs pixel baseline", c6_trained_calibration},
        {7, "product baseline area doubling", c7_area_doubling},
        {8, "sigma-hat optimality", c8_sigma_optimality},
        {9, "crop-size ablation u-shape", c9_crop_ablation},
        {10, "detection ap", c10_ap},
        {11, "cli reproducibility", c11_reproducibility},
    };
    std::set<int> want;
    for (int k = 1; k < argc; ++k) want.insert(std::atoi(argv[k]));

    int failed = 0;
    for (const auto& c : all) {
        if (!want.empty() && !want.count(c.id)) continue;
        const auto start = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - start).count();
        std::string timing = fmt("%.1f s", secs);
        if (o.limit > 0.0) {
            if (o.timing_skipped)
                timing += fmt(", bound %.0f s not judged (cached model)", o.limit);
            else {
                timing += fmt(" of %.0f s", o.limit);
                o.pass = o.pass && secs <= o.limit;
            }
        }
        failed += !o.pass;
        std::printf("%s [%d] %s: %s (%s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
