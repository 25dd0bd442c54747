// cmppp: command-line front end for the point-process detection toolkit.
//
// Exit codes: 0 success, 1 failed self-check, 2 validation/format errors
// (including bad flags), 3 numeric failures.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cmppp/calibrate.hpp"
#include "cmppp/eval.hpp"
#include "cmppp/infer.hpp"
#include "cmppp/io.hpp"
#include "cmppp/nll.hpp"
#include "cmppp/parallel.hpp"
#include "cmppp/selfcheck.hpp"
#include "cmppp/synth.hpp"
#include "cmppp/train.hpp"

namespace fs = std::filesystem;
using namespace cmppp;

namespace {

OrderedJson rng_meta(std::uint64_t seed)
{
    OrderedJson j;
    j["algorithm"] = RngStream::kAlgorithmId;
    j["seed"] = seed;
    return j;
}

void ensure_dir(const fs::path& p)
{
    std::error_code ec;
    fs::create_directories(p, ec);
    if (!fs::is_directory(p)) throw ValidationError("cannot create directory " + p.string());
}

TestRegion parse_region(const std::string& s)
{
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ValidationError("--region expects cx,cy,rw,rh (got '" + s + "')");
        }
    }
    if (v.size() != 4) throw ValidationError("--region expects cx,cy,rw,rh (got '" + s + "')");
    TestRegion r{v[0], v[1], v[2], v[3]};
    validate_region(r);
    return r;
}

std::vector<int> parse_int_list(const std::string& s)
{
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ValidationError("expected a comma-separated integer list (got '" + s + "')");
        }
    }
    return out;
}

struct Common {
    int threads = 0;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true)
{
    app->add_option("--threads", c.threads, "Worker threads (default: $CMPPP_THREADS or all cores)");
    if (with_seed) app->add_option("--seed", c.seed, "Random seed");
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string spec;
    std::size_t n = 2000;
    std::string out;
};

int run_synth(const SynthArgs& a, const CLI::App& app)
{
    SceneSpec spec = a.spec.empty() ? SceneSpec{} : SceneSpec::from_json(read_json(a.spec));
    if (app.count("--seed") || a.spec.empty()) spec.seed = a.common.seed;
    const OrderedJson m = generate_dataset(spec, a.n, a.out, resolve_threads(a.common.threads));
    std::printf("wrote %zu scenes to %s (seed %llu)\n", a.n, a.out.c_str(),
                static_cast<unsigned long long>(spec.seed));
    (void)m;
    return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string config;
    std::string data;
    std::string out;
};

int run_train(const TrainArgs& a, const CLI::App& app)
{
    TrainConfig c = a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_json(a.config));
    if (!a.data.empty()) c.train_data = a.data;
    if (app.count("--seed")) c.seed = a.common.seed;
    const TrainResult r = train_to_dir(c, a.out, resolve_threads(a.common.threads));
    const auto& last = r.log.empty() ? TrainLogRow{} : r.log.back();
    std::printf("trained %s model: %zu steps, final batch loss %.6f, sigma-hat %.6g -> %s\n",
                to_string(c.model).c_str(), r.log.size(), last.loss.total, r.checkpoint.residual.sigma,
                (fs::path(a.out) / kCheckpointFileName).string().c_str());
    return 0;
}

// ---- infer ---------------------------------------------------------------

struct InferArgs {
    Common common;
    std::string ckpt;
    std::vector<std::string> ensemble;
    std::string data;
    int crop = 16;
    std::string out_dir;
};

int run_infer(const InferArgs& a)
{
    std::vector<Checkpoint> members{read_checkpoint(a.ckpt)};
    for (const auto& e : a.ensemble) members.push_back(read_checkpoint(e));
    for (const auto& m : members)
        if (m.model_type != ModelType::Cmppp) throw ValidationError("infer needs CMPPP checkpoints");
    const Dataset data = load_dataset(a.data, false);
    const int threads = resolve_threads(a.common.threads);
    std::vector<std::vector<Detection>> dets(data.size());
    std::vector<Grid> stds(data.size());
    parallel_for(data.size(), threads, [&](std::size_t k) {
        std::vector<IntensityField> fields;
        std::vector<MarkMaps> maps;
        for (const auto& m : members) {
            CmpppOutputs o = forward(m.params, data.items[k].input);
            fields.push_back(std::move(o.field));
            maps.push_back(std::move(o.maps));
        }
        EnsembleResult e = ensemble(fields, maps);
        dets[k] = detect(e.field, e.maps, a.crop, data.items[k].id);
        stds[k] = std::move(e.lambda_std);
    });
    std::string jsonl;
    for (const auto& d : dets) jsonl += detections_to_jsonl(d);
    if (a.out_dir.empty()) {
        std::fputs(jsonl.c_str(), stdout);
        return 0;
    }
    ensure_dir(a.out_dir);
    write_text(fs::path(a.out_dir) / "detections.jsonl", jsonl);
    if (members.size() > 1) {
        ensure_dir(fs::path(a.out_dir) / "std");
        for (std::size_t k = 0; k < data.size(); ++k)
            write_grid(stds[k], fs::path(a.out_dir) / "std" / (data.items[k].id + ".grid"));
    }
    OrderedJson echo;
    echo["ckpt"] = a.ckpt;
    echo["ensemble"] = a.ensemble;
    echo["data"] = a.data;
    echo["crop_px"] = a.crop;
    echo["rng"] = rng_meta(members.front().seed);
    echo["score"] = "1 - exp(-intensity mass captured by the crop)";
    write_text(fs::path(a.out_dir) / "infer_config.json", echo.dump(2) + "\n");
    std::size_t n = 0;
    for (const auto& d : dets) n += d.size();
    std::printf("%zu detections on %zu images -> %s\n", n, data.size(), a.out_dir.c_str());
    return 0;
}

// ---- void ----------------------------------------------------------------

struct VoidArgs {
    std::string ckpt;
    std::string image;
    std::string field;
    std::string marks;
    double sigma = 1.0;
    std::string kind = "laplace";
    std::string region;
    std::string mode = "center";
    std::string mask;
    bool literal = false;
    std::string json_out;
};

int run_void(const VoidArgs& a)
{
    IntensityField field;
    MarkMaps maps;
    ResidualModel residual{residual_kind_from_string(a.kind), a.sigma};
    OrderedJson echo;
    if (!a.ckpt.empty()) {
        if (a.image.empty()) throw ValidationError("--ckpt needs --image");
        const Checkpoint ck = read_checkpoint(a.ckpt);
        if (ck.model_type != ModelType::Cmppp) throw ValidationError("void needs a CMPPP checkpoint");
        CmpppOutputs o = forward(ck.params, read_grid(a.image));
        field = std::move(o.field);
        maps = std::move(o.maps);
        residual = ck.residual;
        echo["ckpt"] = a.ckpt;
        echo["image"] = a.image;
    } else if (!a.field.empty()) {
        field = IntensityField(read_grid(a.field));
        if (!a.marks.empty()) {
            const Grid g = read_grid(a.marks);
            if (g.channels() < 3) throw ValidationError("--marks grid needs 2 + |C| channels");
            maps.b = Grid(g.h_px(), g.w_px(), 2);
            maps.c = Grid(g.h_px(), g.w_px(), g.channels() - 2);
            for (int i = 0; i < g.h_px(); ++i)
                for (int j = 0; j < g.w_px(); ++j)
                    for (int c = 0; c < g.channels(); ++c)
                        (c < 2 ? maps.b(i, j, c) : maps.c(i, j, c - 2)) = g(i, j, c);
        }
        echo["field"] = a.field;
        echo["marks"] = a.marks;
    } else {
        throw ValidationError("void needs --ckpt with --image, or --field");
    }
    if (a.mode != "center" && maps.b.size() == 0)
        throw ValidationError("--mode " + a.mode + " needs mark maps (--ckpt or --marks)");
    double p;
    OrderedJson rj;
    if (a.mode == "mask") {
        if (a.mask.empty()) throw ValidationError("--mode mask needs --mask");
        p = void_probability_general(field, maps, residual, read_grid(a.mask));
        echo["mask"] = a.mask;
    } else {
        if (a.region.empty()) throw ValidationError("--mode " + a.mode + " needs --region cx,cy,rw,rh");
        const TestRegion r = parse_region(a.region);
        rj = {r.cx, r.cy, r.rw, r.rh};
        if (a.mode == "center")
            p = center_void_probability(field, r);
        else if (a.mode == "box")
            p = box_void_probability(field, maps, residual, r, {!a.literal});
        else
            throw ValidationError("unknown --mode '" + a.mode + "' (expected center|box|mask)");
        echo["region"] = rj;
    }
    echo["mode"] = a.mode;
    echo["residual_kind"] = to_string(residual.kind);
    echo["sigma"] = residual.sigma;
    echo["probability"] = p;
    std::printf("%.6f\n", p);
    if (a.json_out.empty())
        std::printf("%s\n", echo.dump().c_str());
    else
        write_text(a.json_out, echo.dump(2) + "\n");
    return 0;
}

// ---- calibrate -----------------------------------------------------------

struct CalibArgs {
    Common common;
    std::string source;
    std::string data;
    double area = 0.01;
    std::string mode = "center";
    std::string recal = "none";
    double fit_frac = 0.2;
    int bins = 10;
    int boxes = 50;
    bool literal = false;
    bool heatmap = false;
    std::string out_dir;
};

int run_calibrate(const CalibArgs& a)
{
    const bool truth = a.source == "true";
    const Dataset data = load_dataset(a.data, truth);
    std::optional<Checkpoint> ck;
    VoidSource src = VoidSource::truth();
    if (!truth) {
        ck = read_checkpoint(a.source);
        src = VoidSource::from(*ck);
    }
    CalibrationOptions opt;
    opt.area_frac = a.area;
    opt.mode = calibration_mode_from_string(a.mode);
    opt.boxes_per_image = a.boxes;
    opt.num_bins = a.bins;
    opt.seed = a.common.seed;
    opt.literal_box_void = a.literal;
    const Recalibration recal = recalibration_from_string(a.recal);
    const CalibrationResult res = calibrate_ppp(src, data, opt, resolve_threads(a.common.threads));

    const int H = data.items.front().input.h_px();
    const int W = data.items.front().input.w_px();
    OrderedJson report;
    OrderedJson cfg;
    cfg["source"] = a.source;
    cfg["source_kind"] = truth ? "true" : to_string(ck->model_type);
    cfg["data"] = a.data;
    cfg["area_frac"] = a.area;
    cfg["area_px"] = a.area * H * W;
    cfg["image_px"] = {H, W};
    cfg["mode"] = src.kind == VoidSource::Kind::Occupancy ? "pixel-product" : a.mode;
    cfg["predicate"] = src.kind == VoidSource::Kind::Occupancy ? "no occupied pixel"
                       : opt.mode == CalibrationMode::Center ? "no gt center"
                                                             : "no gt box overlap";
    cfg["boxes_per_image"] = a.boxes;
    cfg["aspect"] = "log-uniform in [1/4, 4], clamped to fit";
    cfg["literal_box_void"] = a.literal;
    cfg["recalibrate"] = to_string(recal);
    cfg["rng"] = rng_meta(a.common.seed);
    report["config"] = cfg;
    report["reliability"] = res.report.to_json();
    double ece = res.report.ece;
    if (recal != Recalibration::None) {
        const RecalibrationResult rr = recalibrate(res, data, recal, a.fit_frac, a.bins);
        OrderedJson rj;
        rj["fit_frac"] = a.fit_frac;
        rj["fit_images"] = rr.fit_images;
        if (recal == Recalibration::Temperature)
            rj["temperature"] = rr.temperature;
        else
            rj["platt"] = {{"a", rr.platt.a}, {"b", rr.platt.b}};
        rj["before"] = rr.before.to_json();
        rj["after"] = rr.after.to_json();
        report["recalibration"] = rj;
        std::printf("ece %.6f on held-out split before, %.6f after %s\n", rr.before.ece, rr.after.ece,
                    to_string(recal).c_str());
        ece = rr.after.ece;
    }
    std::printf("ece %.6f (%zu records, area %.4g = %.1f px)\n", res.report.ece, res.report.total, a.area,
                a.area * H * W);
    (void)ece;
    if (!a.out_dir.empty()) {
        ensure_dir(a.out_dir);
        write_text(fs::path(a.out_dir) / "report.json", report.dump(2) + "\n");
        write_text(fs::path(a.out_dir) / "reliability.csv", res.report.to_csv());
        if (a.heatmap) {
            src.true_residual = data.true_residual;
            write_pgm(void_heatmap(src, data.items.front(), a.area, opt.mode),
                      fs::path(a.out_dir) / (data.items.front().id + "_void.pgm"));
        }
    } else {
        std::printf("%s\n", report.dump().c_str());
    }
    return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string ckpt;
    std::string data;
    int crop = 16;
    std::string ablate;
    bool multi_iou = false;
    std::string out_dir;
};

int run_eval(const EvalArgs& a)
{
    const Checkpoint ck = read_checkpoint(a.ckpt);
    const Dataset data = load_dataset(a.data, false);
    const int threads = resolve_threads(a.common.threads);
    std::vector<int> crops = a.ablate.empty() ? std::vector<int>{a.crop} : parse_int_list(a.ablate);
    const auto rows = crop_ablation(ck, data, crops, threads, a.multi_iou);

    std::vector<ImageRecord> recs(data.size());
    parallel_for(data.size(), threads, [&](std::size_t k) {
        recs[k].dets = detect(ck, data.items[k].input, a.crop, data.items[k].id);
        recs[k].gt = data.items[k].gt;
    });
    const ApReport ap = average_precision(recs, ck.num_classes, 0.5, a.multi_iou);
    OrderedJson summary;
    summary["ckpt"] = a.ckpt;
    summary["data"] = a.data;
    summary["crop_px"] = a.crop;
    summary["ap"] = ap.to_json();
    summary["rng"] = rng_meta(ck.seed);
    const std::string csv = ablation_csv(rows);
    if (a.out_dir.empty()) {
        std::printf("%s\n%s", summary.dump(2).c_str(), csv.c_str());
    } else {
        ensure_dir(a.out_dir);
        write_text(fs::path(a.out_dir) / "eval.json", summary.dump(2) + "\n");
        write_text(fs::path(a.out_dir) / "ablation.csv", csv);
        std::printf("mAP %.4f at crop %d (tp %zu, fp %zu, fn %zu)\n%s", ap.map, a.crop, ap.tp, ap.fp, ap.fn,
                    csv.c_str());
    }
    return 0;
}

// ---- check ---------------------------------------------------------------

int run_check(const Common& c, double effort)
{
    SelfCheckOptions o;
    o.seed = c.seed;
    o.threads = resolve_threads(c.threads);
    o.effort = effort;
    bool all = true;
    for (const auto& r : run_selfcheck(o)) {
        std::printf("%s  %-48s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        all &= r.passed;
    }
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Conditional marked Poisson point process detection toolkit"};
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--spec", sa.spec, "Scene spec JSON")->check(CLI::ExistingFile);
    synth->add_option("--n", sa.n, "Number of scenes");
    synth->add_option("--out", sa.out, "Output directory")->required();
    add_common(synth, sa.common);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", ta.config, "Train config JSON")->check(CLI::ExistingFile);
    train_cmd->add_option("--data", ta.data, "Dataset directory (overrides train_data)");
    train_cmd->add_option("--out", ta.out, "Checkpoint directory")->required();
    add_common(train_cmd, ta.common);

    InferArgs ia;
    auto* infer_cmd = app.add_subcommand("infer", "Run detection");
    infer_cmd->add_option("--ckpt", ia.ckpt, "Checkpoint")->required();
    infer_cmd->add_option("--ensemble", ia.ensemble, "Additional checkpoints to average");
    infer_cmd->add_option("--data", ia.data, "Dataset directory")->required();
    infer_cmd->add_option("--crop", ia.crop, "Suppression crop size in pixels");
    infer_cmd->add_option("--out", ia.out_dir, "Output directory (default: JSONL on stdout)");
    add_common(infer_cmd, ia.common, false);

    VoidArgs va;
    auto* void_cmd = app.add_subcommand("void", "Void probability of a region");
    void_cmd->add_option("--ckpt", va.ckpt, "Checkpoint");
    void_cmd->add_option("--image", va.image, "Input grid");
    void_cmd->add_option("--field", va.field, "Log-intensity grid (instead of --ckpt)");
    void_cmd->add_option("--marks", va.marks, "Mark grid, B then C channels (with --field)");
    void_cmd->add_option("--sigma", va.sigma, "Residual scale (with --field)");
    void_cmd->add_option("--kind", va.kind, "Residual kind laplace|gaussian (with --field)");
    void_cmd->add_option("--region", va.region, "cx,cy,rw,rh");
    void_cmd->add_option("--mode", va.mode, "center|box|mask");
    void_cmd->add_option("--mask", va.mask, "Pixel mask grid for --mode mask");
    void_cmd->add_flag("--complement-only", va.literal, "Box mode: leave out centers inside the region");
    void_cmd->add_option("--json", va.json_out, "Write the JSON result here");

    CalibArgs ca;
    auto* calib_cmd = app.add_subcommand("calibrate", "Calibration report on random test boxes");
    calib_cmd->add_option("--source", ca.source, "'true' or a checkpoint path")->required();
    calib_cmd->add_option("--data", ca.data, "Dataset directory")->required();
    calib_cmd->add_option("--area", ca.area, "Test-box area as a fraction of the image");
    calib_cmd->add_option("--mode", ca.mode, "center|box");
    calib_cmd->add_option("--recalibrate", ca.recal, "none|temp|platt");
    calib_cmd->add_option("--fit-frac", ca.fit_frac, "Fraction of images used to fit the recalibration");
    calib_cmd->add_option("--bins", ca.bins, "Number of equal-width ECE bins");
    calib_cmd->add_option("--boxes", ca.boxes, "Test boxes per image");
    calib_cmd->add_flag("--complement-only", ca.literal, "Box mode: leave out centers inside the region");
    calib_cmd->add_flag("--heatmap", ca.heatmap, "Dump a PGM void heatmap of the first image");
    calib_cmd->add_option("--out", ca.out_dir, "Report directory (default: JSON on stdout)");
    add_common(calib_cmd, ca.common);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Detection AP and crop ablation");
    eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
    eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
    eval_cmd->add_option("--crop", ea.crop, "Crop size for the AP summary");
    eval_cmd->add_option("--ablate", ea.ablate, "Comma-separated crop sizes, e.g. 8,16,24,32,48,64");
    eval_cmd->add_flag("--multi-iou", ea.multi_iou, "Average AP over IoU 0.50:0.05:0.95");
    eval_cmd->add_option("--out", ea.out_dir, "Output directory");
    add_common(eval_cmd, ea.common, false);

    Common cc;
    double effort = 1.0;
    auto* check_cmd = app.add_subcommand("check", "Monte-Carlo and gradient self-checks");
    check_cmd->add_option("--effort", effort, "Scale of the Monte-Carlo sample sizes");
    add_common(check_cmd, cc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*synth) return run_synth(sa, *synth);
        if (*train_cmd) return run_train(ta, *train_cmd);
        if (*infer_cmd) return run_infer(ia);
        if (*void_cmd) return run_void(va);
        if (*calib_cmd) return run_calibrate(ca);
        if (*eval_cmd) return run_eval(ea);
        if (*check_cmd) return run_check(cc, effort);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
