#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "../oracles.hpp"
#include "stiffkin/cli.hpp"
#include "stiffkin/report.hpp"
#include "stiffkin/solver.hpp"

using namespace stiffkin;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Fresh scratch directory per test case.
std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stiffkin_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

int run(std::vector<std::string> args) { return run_cli(args); }

json read_json(const std::string& path) { return json::parse(read_text(path)); }

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

/// id,k rows read directly.
std::map<std::size_t, double> read_pairs(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::map<std::size_t, double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    out[std::stoul(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
  }
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("generate writes the expected number of rows with a stable hash") {
    const auto dir = scratch("generate");
    REQUIRE(run({"generate", oracle::data_path("robertson.mech"), "-o", dir + "/rob"}) == 0);
    CHECK(read_trajectory_csv(dir + "/rob/dataset.csv").n_times() == 50);
    const auto meta = read_json(dir + "/rob/dataset.json");
    CHECK(meta["n_times"] == 50);
    const std::string hash = meta["hash"];
    CHECK(hash.rfind("fnv1a64:", 0) == 0);
    CHECK(hash == "fnv1a64:" + hex64(fnv1a64(read_text(dir + "/rob/dataset.csv"))));
    REQUIRE(run({"generate", oracle::data_path("robertson.mech"), "-o", dir + "/rob2"}) == 0);
    CHECK(read_json(dir + "/rob2/dataset.json")["hash"] == hash);
    CHECK(fs::exists(dir + "/rob/config.ini"));

    REQUIRE(run({"generate", oracle::data_path("pollu.mech"), "-o", dir + "/pollu"}) == 0);
    CHECK(read_trajectory_csv(dir + "/pollu/dataset.csv").n_times() == 100);
    REQUIRE(run({"generate", oracle::data_path("aoxid.mech"), "--downsample", "10", "-o", dir + "/aoxid"}) == 0);
    CHECK(read_trajectory_csv(dir + "/aoxid/dataset.csv").n_times() == 11);
  }

  TEST_CASE("error cases exit nonzero") {
    const auto dir = scratch("errors");
    const auto rob = oracle::data_path("robertson.mech");
    CHECK(run({"train", rob, "--stage", "3", "-o", dir}) != 0);
    CHECK_FALSE(fs::exists(dir + "/stage3.json"));
    CHECK(run({"train", rob, "--stage", "2", "-o", dir}) != 0);
    CHECK(run({"train", rob, "--stage", "4", "-o", dir}) != 0);
    CHECK(run({"frobnicate"}) != 0);
    CHECK(run({"generate", dir + "/missing.mech"}) != 0);
    CHECK(run({"evaluate", rob, "-o", dir}) != 0);
    CHECK(run({"evaluate", rob, "--init", "perturbed:x", "-o", dir}) != 0);
    CHECK(run({"ablate", rob, "-o", dir}) != 0);
    CHECK(run({"ablate", rob, "--variant", "nope", "-o", dir}) != 0);
  }

  TEST_CASE("evaluating the truth gives zero coefficient error") {
    const auto dir = scratch("truth");
    REQUIRE(run({"evaluate", oracle::data_path("robertson.mech"), "--init", "truth", "-o", dir}) == 0);
    const auto m = read_json(dir + "/metrics.json");
    CHECK(m["coeff_mae"].get<double>() <= 1e-12);
    CHECK(m["traj_mse"].get<double>() <= 1e-8);
    CHECK(fs::exists(dir + "/coefficient_scatter.svg"));
    CHECK(fs::exists(dir + "/trajectory_overlay_1.svg"));
    CHECK(fs::exists(dir + "/trajectory.csv"));
    CHECK(fs::exists(dir + "/coefficients.csv"));
  }

  TEST_CASE("published POLLU estimates evaluate to the recomputed errors") {
    const auto dir = scratch("pollu");
    const auto mech = oracle::data_path("pollu.mech");
    const auto csv = oracle::data_path("pollu_predicted.csv");
    REQUIRE(run({"evaluate", mech, "--init", "file:" + csv, "-o", dir}) == 0);
    const auto m = read_json(dir + "/metrics.json");

    const auto scheme = load_scheme(mech);
    const auto pred = read_pairs(csv);
    double log10_sum = 0.0, ln_sum = 0.0;
    std::size_t trainable = 0;
    for (const auto& r : scheme.reactions) {
      const double est = pred.count(r.id) ? pred.at(r.id) : r.rate_coefficient;
      ln_sum += std::abs(std::log(est / r.rate_coefficient));
      if (r.frozen) continue;
      log10_sum += std::abs(std::log10(est / r.rate_coefficient));
      ++trainable;
    }
    REQUIRE(trainable == 20);
    CHECK(m["coeff_mae"].get<double>() == doctest::Approx(log10_sum / 20.0).epsilon(1e-12));
    CHECK(m["coeff_mae_ln_all"].get<double>() == doctest::Approx(ln_sum / 25.0).epsilon(1e-12));

    const std::string svg = read_text(dir + "/coefficient_scatter.svg");
    CHECK(count_of(svg, "class=\"truth\"") == 20);
    CHECK(count_of(svg, "class=\"estimate\"") == 20);
  }

  TEST_CASE("coefficient files") {
    const auto dir = scratch("coeffs");
    const auto scheme = load_scheme(oracle::data_path("pollu.mech"));
    const auto p = read_coefficient_csv(oracle::data_path("pollu_predicted.csv"), scheme);
    for (std::size_t i = 0; i < scheme.n_reactions(); ++i)
      if (scheme.reactions[i].frozen)
        CHECK(p.coefficients()[static_cast<Eigen::Index>(i)] == doctest::Approx(scheme.reactions[i].rate_coefficient));
    write_text(dir + "/short.csv", "id,k\n1,0.5\n");
    CHECK_THROWS(read_coefficient_csv(dir + "/short.csv", scheme));
    write_text(dir + "/bad.csv", "id,k\n1,abc\n");
    CHECK_THROWS(read_coefficient_csv(dir + "/bad.csv", scheme));

    const auto truth = resolve_init("truth", scheme, 1);
    CHECK(truth.log_k == CrnnParams::truth(scheme).log_k);
    CHECK(resolve_init("random", scheme, 1).log_k == resolve_init("random", scheme, 1).log_k);
    CHECK(resolve_init("perturbed:0.2", scheme, 1).log_k != truth.log_k);
    CHECK_THROWS(resolve_init("perturbed:-1", scheme, 1));
    CHECK_THROWS(resolve_init("whatever", scheme, 1));
  }

  TEST_CASE("command line overrides the config file, which overrides defaults") {
    const auto dir = scratch("config");
    write_text(dir + "/run.cfg", "# comment\nseed = 3\nepochs2 = 7\nepochs3 = 0\nrtol=1e-7\n");
    REQUIRE(run({"train", oracle::data_path("robertson.mech"), "--stage", "3", "--init", "truth", "--config",
                 dir + "/run.cfg", "--seed", "5", "-o", dir + "/out"}) == 0);
    const std::string echo = read_text(dir + "/out/config.ini");
    CHECK(echo.find("seed = 5\n") != std::string::npos);
    CHECK(echo.find("epochs2 = 7\n") != std::string::npos);
    CHECK(echo.find("rtol = 1e-7\n") != std::string::npos);
    CHECK(echo.find("epochs1 = 5000\n") != std::string::npos);
    // The echo is itself a valid config that reproduces the run.
    REQUIRE(run({"train", oracle::data_path("robertson.mech"), "--config", dir + "/out/config.ini", "-o",
                 dir + "/again"}) == 0);
    const std::string again = read_text(dir + "/again/config.ini");
    CHECK(again.find("seed = 5\n") != std::string::npos);
    CHECK(again.find("init = truth\n") != std::string::npos);
    CHECK(read_json(dir + "/again/metrics.json") == read_json(dir + "/out/metrics.json"));
    write_text(dir + "/bad.cfg", "nonsense = 1\n");
    CHECK(run({"generate", oracle::data_path("robertson.mech"), "--config", dir + "/bad.cfg", "-o", dir + "/o2"}) != 0);
  }

  TEST_CASE("short training runs are reproducible") {
    const auto dir = scratch("train");
    const auto rob = oracle::data_path("robertson.mech");
    const std::vector<std::string> common{"--seed", "7", "--epochs1", "2", "--epochs2", "20", "--epochs3", "2",
                                          "--hidden", "8"};
    auto a = std::vector<std::string>{"train", rob, "-o", dir + "/a"};
    auto b = std::vector<std::string>{"train", rob, "-o", dir + "/b"};
    a.insert(a.end(), common.begin(), common.end());
    b.insert(b.end(), common.begin(), common.end());
    REQUIRE(run(a) == 0);
    REQUIRE(run(b) == 0);
    const auto ra = read_json(dir + "/a/report.json");
    const auto rb = read_json(dir + "/b/report.json");
    CHECK(ra["stages"].size() == 3);
    REQUIRE(ra.contains("final_metrics"));
    CHECK(ra["final_metrics"] == rb["final_metrics"]);
    CHECK(ra["stage_metrics"] == rb["stage_metrics"]);
    for (const char* f : {"stage1.json", "stage2.json", "stage3.json", "loss_curves.csv", "loss_curves.svg",
                          "config.ini", "stage1_fitted.csv"})
      CHECK(fs::exists(dir + "/a/" + f));

    // Stage 3 alone picks up the stage-2 checkpoint.
    REQUIRE(run({"train", rob, "--stage", "3", "--epochs3", "1", "-o", dir + "/a"}) == 0);
    REQUIRE(run({"evaluate", rob, "-o", dir + "/a"}) == 0);
    CHECK(fs::exists(dir + "/a/metrics.json"));
  }
}
