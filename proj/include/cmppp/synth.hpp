#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmppp/core.hpp"
#include "cmppp/io.hpp"
#include "cmppp/marks.hpp"
#include "cmppp/pointprocess.hpp"
#include "cmppp/rng.hpp"

namespace cmppp {

struct ClassPrior {
    double mean_w = 0.1;
    double mean_h = 0.1;
    std::array<double, 3> color{1.0, 0.0, 0.0};
};

/// Parameters of the synthetic scene family.
struct SceneSpec {
    int h_px = 64;
    int w_px = 64;
    double mean_count = 5.0;
    std::vector<ClassPrior> classes = default_classes();
    /// Laplace scale of the size residual around the class mean, shared by
    /// all classes and both coordinates.
    double size_scale = 0.01;

    int min_bumps = 3;
    int max_bumps = 6;
    double bump_width_min = 0.10;
    double bump_width_max = 0.25;
    double bump_amp_min = 0.5;
    double bump_amp_max = 2.0;

    double background = 0.45;
    double texture_amplitude = 0.08;
    double texture_frequency = 3.0;
    double noise_std = 0.12;
    /// Expected number of achromatic distractor rectangles per scene.
    double clutter = 1.5;
    std::uint64_t seed = 0;

    int num_classes() const { return static_cast<int>(classes.size()); }
    ResidualModel true_residual() const { return {ResidualKind::Laplace, size_scale}; }

    void validate() const;
    OrderedJson to_json() const;
    /// Missing keys keep their defaults.
    static SceneSpec from_json(const Json& j);
    static std::vector<ClassPrior> default_classes();
};

struct Scene {
    Grid input;              // H x W x 3, values rounded to float32
    MarkedPointConfig gt;
    IntensityField true_field;
    MarkMaps true_maps;
};

/// Draws a smooth log-intensity (a sum of Gaussian bumps shifted so the
/// total mass equals mean_count), samples centers from it, draws marks from
/// the per-pixel class and size fields, and renders objects as anti-aliased
/// filled rectangles over textured background with optional clutter and
/// pixel noise. The class of a pixel is that of its dominant bump.
Scene generate_scene(const SceneSpec& spec, Rng& rng, const std::string& image_id);

/// Scene with index k of the dataset seeded by spec.seed.
Scene generate_indexed_scene(const SceneSpec& spec, std::size_t index);

std::string image_id_for(std::size_t index);

struct DatasetItem {
    std::string id;
    Grid input;
    MarkedPointConfig gt;
    std::optional<IntensityField> true_field;
    std::optional<MarkMaps> true_maps;
};

struct Dataset {
    OrderedJson manifest = OrderedJson::object();
    int num_classes = 0;
    std::optional<ResidualModel> true_residual;
    std::vector<DatasetItem> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    double mean_count() const;
};

/// In-memory dataset of scenes [first, first + n).
Dataset make_dataset(const SceneSpec& spec, std::size_t n, std::size_t first = 0, int threads = 1);

// Dataset directory: manifest.json plus, per image k,
//   img_k.grid (input), img_k.json (ground truth),
//   img_k.intensity.grid (true L), img_k.marks.grid (true B then C channels).
inline constexpr const char* kManifestName = "manifest.json";

/// Writes n scenes and returns the manifest.
OrderedJson generate_dataset(const SceneSpec& spec, std::size_t n, const std::filesystem::path& out_dir,
                             int threads = 1);

Dataset load_dataset(const std::filesystem::path& dir, bool load_truth = true);

/// Rows [first, last) of a dataset (copies).
Dataset subset(const Dataset& ds, std::size_t first, std::size_t last);

}  // namespace cmppp
