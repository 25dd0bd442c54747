#include <doctest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "cmppp/convnet.hpp"
#include "cmppp/io.hpp"
#include "helpers.hpp"

using namespace cmppp;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run cli(const std::string& args)
{
    const std::string cmd = std::string(CMPPP_CLI_PATH) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace

TEST_CASE("void on a unit field")
{
    const auto dir = testutil::tmp_dir("cli_void");
    write_grid(Grid(8, 8, 1, 0.0), dir / "L.grid");
    const Run r = cli("void --field " + (dir / "L.grid").string() + " --region 0.5,0.5,1,1 --mode center");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("0.367879\n", 0) == 0);
    const auto j = Json::parse(r.out.substr(r.out.find('\n') + 1));
    CHECK(j["probability"].get<double>() == doctest::Approx(std::exp(-1.0)));

    // Box mode with marks and a json dump.
    write_grid(Grid(8, 8, 4, 0.1), dir / "M.grid");
    const Run b = cli("void --field " + (dir / "L.grid").string() + " --marks " + (dir / "M.grid").string() +
                      " --sigma 0.05 --region 0.5,0.5,0.25,0.25 --mode box --json " + (dir / "v.json").string());
    CHECK(b.code == 0);
    CHECK(read_json(dir / "v.json")["probability"].get<double>() <= std::exp(-0.25 * 0.25) + 1e-12);
}

TEST_CASE("exit codes")
{
    const auto dir = testutil::tmp_dir("cli_codes");
    CHECK(cli("--help").code == 0);
    CHECK(cli("void --bogus").code == 2);
    CHECK(cli("nosuchcommand").code == 2);
    CHECK(cli("void --field /nonexistent.grid --region 0.5,0.5,1,1").code == 2);
    write_grid(Grid(8, 8, 1, 0.0), dir / "L.grid");
    CHECK(cli("void --field " + (dir / "L.grid").string() + " --region 0.5,0.5,0,1").code == 2);
    CHECK(cli("void --field " + (dir / "L.grid").string() + " --region 0.5,0.5,1,1 --mode box").code == 2);
    write_text(dir / "bad.json", R"({"epochs": 1, "learning_rate": 1e12, "momentum": 0, "lr_schedule": "constant"})");
    write_text(dir / "spec.json", R"({"h_px": 16, "w_px": 16})");
    REQUIRE(cli("synth --spec " + (dir / "spec.json").string() + " --n 4 --out " + (dir / "d").string()).code == 0);
    write_text(dir / "bad2.json", R"({"epochs": 3, "batch_size": 1, "learning_rate": 1e12, "momentum": 0, "lr_schedule": "constant", "width": 4})");
    CHECK(cli("train --config " + (dir / "bad2.json").string() + " --data " + (dir / "d").string() + " --out " +
              (dir / "o").string())
              .code == 3);
    write_text(dir / "unknown.json", R"({"epochz": 1})");
    CHECK(cli("train --config " + (dir / "unknown.json").string() + " --data " + (dir / "d").string() + " --out " +
              (dir / "o2").string())
              .code == 2);
}

TEST_CASE("synth, train, infer, eval and calibrate end to end")
{
    const auto dir = testutil::tmp_dir("cli_e2e");
    write_text(dir / "spec.json", R"({"h_px": 16, "w_px": 16, "mean_count": 2})");
    write_text(dir / "train.json", R"({"epochs": 1, "batch_size": 4, "width": 4})");
    const std::string d = (dir / "data").string(), o = (dir / "ck").string();
    REQUIRE(cli("synth --spec " + (dir / "spec.json").string() + " --n 8 --out " + d + " --seed 5").code == 0);
    CHECK(read_json(dir / "data" / "manifest.json")["rng"]["seed"] == 5);
    REQUIRE(cli("train --config " + (dir / "train.json").string() + " --data " + d + " --out " + o).code == 0);
    CHECK(std::filesystem::exists(dir / "ck" / "model.ckpt"));

    const Run inf = cli("infer --ckpt " + o + " --data " + d + " --crop 4");
    CHECK(inf.code == 0);
    std::size_t lines = 0;
    for (char ch : inf.out) lines += ch == '\n';
    CHECK(lines >= 1);
    const Run inf2 = cli("infer --ckpt " + o + " --data " + d + " --crop 4");
    CHECK(inf.out == inf2.out);

    const Run ens = cli("infer --ckpt " + o + " --ensemble " + o + " --data " + d + " --crop 4 --out " +
                        (dir / "ens").string());
    CHECK(ens.code == 0);

    CHECK(cli("eval --ckpt " + o + " --data " + d + " --ablate 4,8 --out " + (dir / "ev").string()).code == 0);
    CHECK(std::filesystem::exists(dir / "ev"));

    const Run cal = cli("calibrate --source true --data " + d + " --area 0.02 --mode box");
    CHECK(cal.code == 0);
    const Run cal2 = cli("calibrate --source " + o + " --data " + d + " --area 0.02 --recalibrate temp --fit-frac 0.5");
    CHECK(cal2.code == 0);
    CHECK(cli("calibrate --source true --data " + d + " --mode diagonal").code == 2);
}
