#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "cmppp/core.hpp"
#include "cmppp/marks.hpp"
#include "cmppp/pointprocess.hpp"
#include "cmppp/rng.hpp"

namespace testutil {

inline std::filesystem::path tmp_dir(const std::string& name)
{
    const auto p = std::filesystem::path(CMPPP_TEST_TMP) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline cmppp::IntensityField random_field(cmppp::Rng& rng, int H, int W, double lo, double hi)
{
    cmppp::Grid L(H, W, 1);
    for (double& v : L.values()) v = rng.uniform(lo, hi);
    return cmppp::IntensityField(std::move(L));
}

inline cmppp::MarkMaps random_maps(cmppp::Rng& rng, int H, int W, int C, double lo = 0.05, double hi = 0.3)
{
    cmppp::MarkMaps m{cmppp::Grid(H, W, 2), cmppp::Grid(H, W, C)};
    for (double& v : m.b.values()) v = rng.uniform(lo, hi);
    for (double& v : m.c.values()) v = rng.normal();
    return m;
}

inline cmppp::MarkedPointConfig random_gt(cmppp::Rng& rng, int n, int C)
{
    cmppp::MarkedPointConfig cfg;
    cfg.image_id = "r";
    for (int k = 0; k < n; ++k)
        cfg.points.push_back({rng.uniform(), rng.uniform(), rng.uniform(0.02, 0.3), rng.uniform(0.02, 0.3),
                              static_cast<int>(rng.below(static_cast<std::uint64_t>(C)))});
    return cfg;
}

inline double rel_err(double a, double b, double floor = 1e-4)
{
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace testutil
