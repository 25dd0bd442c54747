#include "cmppp/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cmppp {

static_assert(std::endian::native == std::endian::little,
              "grid payload encoding assumes a little-endian host");

std::string grid_header(const Grid& grid)
{
    std::ostringstream os;
    os << R"({"h":)" << grid.h_px() << R"(,"w":)" << grid.w_px() << R"(,"c":)" << grid.channels()
       << R"(,"dtype":"f32","order":"row-major","endian":"little"})";
    return os.str();
}

void write_grid(const Grid& grid, const std::filesystem::path& path)
{
    std::vector<float> payload(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double v = grid.values()[k];
        if (!std::isfinite(v)) throw ValidationError("write_grid: non-finite value");
        payload[k] = static_cast<float>(v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out << kGridMagic << '\n' << grid_header(grid) << '\n';
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw ValidationError("failed writing " + path.string());
}

Grid read_grid(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open grid file " + path.string());
    std::string magic;
    std::string header;
    if (!std::getline(in, magic) || magic != kGridMagic)
        throw FormatError(path.string() + ": bad grid magic");
    if (!std::getline(in, header)) throw FormatError(path.string() + ": missing grid header");
    Json h;
    try {
        h = Json::parse(header);
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": malformed grid header");
    }
    if (!h.is_object() || !h.contains("h") || !h.contains("w") || !h.contains("c") ||
        h.value("dtype", "") != "f32" || h.value("order", "") != "row-major" ||
        h.value("endian", "") != "little")
        throw FormatError(path.string() + ": unsupported grid header");
    const long long hh = h["h"].get<long long>();
    const long long ww = h["w"].get<long long>();
    const long long cc = h["c"].get<long long>();
    if (hh <= 0 || ww <= 0 || cc <= 0 || hh * ww * cc > (1LL << 31))
        throw FormatError(path.string() + ": invalid grid shape");
    const std::size_t n = static_cast<std::size_t>(hh * ww * cc);
    std::vector<float> payload(n);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
        throw FormatError(path.string() + ": truncated grid payload");
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError(path.string() + ": trailing bytes after grid payload");
    std::vector<double> values(payload.begin(), payload.end());
    return Grid(static_cast<int>(hh), static_cast<int>(ww), static_cast<int>(cc), std::move(values));
}

OrderedJson config_to_json(const MarkedPointConfig& cfg)
{
    OrderedJson j;
    j["image_id"] = cfg.image_id;
    j["points"] = OrderedJson::array();
    for (const auto& p : cfg.points) {
        OrderedJson q;
        q["x"] = p.x;
        q["y"] = p.y;
        q["w"] = p.w;
        q["h"] = p.h;
        q["class_id"] = p.class_id;
        j["points"].push_back(std::move(q));
    }
    return j;
}

MarkedPointConfig config_from_json(const Json& j)
{
    MarkedPointConfig cfg;
    try {
        cfg.image_id = j.at("image_id").get<std::string>();
        for (const auto& q : j.at("points")) {
            MarkedPoint p;
            p.x = q.at("x").get<double>();
            p.y = q.at("y").get<double>();
            p.w = q.at("w").get<double>();
            p.h = q.at("h").get<double>();
            p.class_id = q.at("class_id").get<int>();
            cfg.points.push_back(p);
        }
    } catch (const Json::exception& e) {
        throw FormatError(std::string("malformed configuration: ") + e.what());
    }
    validate_ground_truth(cfg);
    return cfg;
}

void write_config(const MarkedPointConfig& cfg, const std::filesystem::path& path)
{
    write_text(path, config_to_json(cfg).dump() + "\n");
}

MarkedPointConfig read_config(const std::filesystem::path& path)
{
    return config_from_json(read_json(path));
}

Json read_json(const std::filesystem::path& path)
{
    const std::string text = read_text(path);
    try {
        return Json::parse(text);
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw ValidationError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace cmppp
