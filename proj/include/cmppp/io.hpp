#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cmppp/core.hpp"

namespace cmppp {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// Grid file layout:
//   PPGRID1\n
//   {"h":H,"w":W,"c":C,"dtype":"f32","order":"row-major","endian":"little"}\n
//   H*W*C little-endian float32 values, row-major, channels innermost.
inline constexpr const char* kGridMagic = "PPGRID1";

void write_grid(const Grid& grid, const std::filesystem::path& path);
Grid read_grid(const std::filesystem::path& path);

/// Header line exactly as written to disk (without the newline).
std::string grid_header(const Grid& grid);

OrderedJson config_to_json(const MarkedPointConfig& cfg);
/// Parses and validates a ground-truth configuration.
MarkedPointConfig config_from_json(const Json& j);

void write_config(const MarkedPointConfig& cfg, const std::filesystem::path& path);
MarkedPointConfig read_config(const std::filesystem::path& path);

Json read_json(const std::filesystem::path& path);
/// Writes text atomically enough for our purposes (truncate + write).
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cmppp
