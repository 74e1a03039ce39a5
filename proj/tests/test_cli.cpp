#include <doctest.h>

#include <fstream>
#include <sstream>
#include <vector>

#include "support.hpp"
#include "ulw/cli.hpp"

using ulw::test::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "ulw");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = ulw::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string smoke_config() { return (std::filesystem::path(ULW_CONFIG_DIR) / "smoke_test.json").string(); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"bogus"}).code == 2);
    const auto r = run({"train", "--no-such-flag"});
    CHECK(r.code == 2);
    CHECK(r.err.find("error:") == 0);
    CHECK(run({"evaluate"}).code == 2);  // --checkpoint is required
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("runtime errors exit 1 with a one-line message") {
    TempDir dir("cli_err");
    std::ofstream(dir / "bad.json") << R"({"optimiser": {}})";
    const auto r = run({"train", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("error: ") == 0);
    CHECK(r.err.find("optimiser") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  }

  TEST_CASE("gradcheck passes") {
    const auto r = run({"gradcheck", "--seed", "3"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
  }

  TEST_CASE("synth then metrics on identical directories") {
    TempDir dir("cli_synth");
    REQUIRE(run({"synth", "--config", smoke_config(), "--out", dir.path().string()}).code == 0);
    const auto smoky = (dir / "smoky").string();
    const auto r = run({"metrics", smoky, smoky, "--out", (dir / "m").string()});
    REQUIRE(r.code == 0);
    std::istringstream csv(r.out);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "id,ssim,psnr_db,mse,ciede2000");
    int rows = 0;
    while (std::getline(csv, line)) {
      CHECK(line.find(",1,inf,0,0") != std::string::npos);
      ++rows;
    }
    CHECK(rows == 8);
    CHECK(slurp(dir / "m/metrics.csv") == r.out);

    // Mismatched file names are a pairing failure.
    std::filesystem::remove(dir / "clean/synth_0000.png");
    CHECK(run({"metrics", smoky, (dir / "clean").string()}).code == 1);
  }

  TEST_CASE("train, resume and evaluate") {
    TempDir dir("cli_train");
    const auto out = (dir / "run").string();
    REQUIRE(run({"train", "--config", smoke_config(), "--out", out}).code == 0);
    for (const char* f : {"checkpoint.bin", "history.csv", "config.json"}) {
      CHECK(std::filesystem::exists(dir / ("run/" + std::string(f))));
    }
    const auto ev = run({"evaluate", "--config", smoke_config(), "--checkpoint", out + "/checkpoint.bin",
                         "--split", "all", "--out", (dir / "ev").string()});
    CHECK(ev.code == 0);
    CHECK(std::filesystem::exists(dir / "ev/metrics.csv"));

    // A different seed changes the config hash, so resuming is refused.
    const auto refused = run({"train", "--config", smoke_config(), "--seed", "99", "--out", (dir / "x").string(),
                              "--resume", out + "/checkpoint.bin"});
    CHECK(refused.code == 1);
    CHECK(refused.err.find("refusing") != std::string::npos);
  }

  TEST_CASE("ablate writes the full report set reproducibly") {
    TempDir dir("cli_ablate");
    const auto a = (dir / "a").string(), b = (dir / "b").string();
    const auto r = run({"ablate", "--config", smoke_config(), "--out", a});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("| Full ULW |") != std::string::npos);
    for (const char* f : {"report.md", "report.csv", "config.json", "grid.png", "full_ulw/checkpoint.bin",
                          "no_wiener/history.csv"}) {
      CHECK(std::filesystem::exists(std::filesystem::path(a) / f));
    }
    REQUIRE(run({"ablate", "--config", smoke_config(), "--out", b}).code == 0);
    for (const char* f : {"report.md", "report.csv", "grid.png"}) {
      CHECK(slurp(std::filesystem::path(a) / f) == slurp(std::filesystem::path(b) / f));
    }
  }
}
