#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include <kflow/io.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path work = fs::temp_directory_path() / "kflow_cli_tests";

int run(const std::string& args) {
  const std::string cmd = std::string(KFLOW_BIN) + " " + args + " > " + (work / "stdout.txt").string() +
                          " 2> " + (work / "stderr.txt").string();
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

void write_config(const fs::path& p, const nlohmann::json& j) {
  std::ofstream f(p);
  f << j.dump(2);
}

nlohmann::json small_flat_config() {
  return {{"n", 1}, {"points_per_axis", 16}, {"potential", nlohmann::json::array()}, {"seed", 7}};
}

nlohmann::json small_curved_config() {
  return {{"n", 1},
          {"points_per_axis", 16},
          {"potential", {{{"k", {1, 0}}, {"amp", 0.05}, {"phase", 0.0}}}},
          {"seed", 7}};
}

std::string report_without_timings(const fs::path& p) {
  std::ifstream f(p);
  nlohmann::json j;
  f >> j;
  j.erase("timings");
  return j.dump();
}

} // namespace

TEST_CASE("cli: geometry command on flat and curved configs") {
  fs::create_directories(work);
  write_config(work / "flat.json", small_flat_config());
  CHECK(run("geom --config " + (work / "flat.json").string()) == 0);

  write_config(work / "curved.json", small_curved_config());
  const fs::path out = work / "geom_out";
  CHECK(run("geom --config " + (work / "curved.json").string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "omega.kfld"));
  // dumps parse back
  kflow::TensorField om = kflow::read_kfld_tensor((out / "omega.kfld").string());
  CHECK(om.rank == 2);
  kflow::ScalarField mu = kflow::read_kfld_scalar((out / "mu.kfld").string());
  CHECK(mu.spec.p == 16);
}

TEST_CASE("cli: moment and star commands pass on the curved config") {
  fs::create_directories(work);
  write_config(work / "curved.json", small_curved_config());
  CHECK(run("moment --config " + (work / "curved.json").string()) == 0);
  CHECK(run("star --config " + (work / "curved.json").string()) == 0);
}

TEST_CASE("cli: optimize writes a trajectory and passes") {
  fs::create_directories(work);
  auto cfg = small_curved_config();
  cfg["optimizer"] = {{"max_iters", 200}, {"tol_mu", 5e-7}};
  write_config(work / "opt.json", cfg);
  const fs::path out = work / "opt_out";
  CHECK(run("optimize --config " + (work / "opt.json").string() + " --out " + out.string()) == 0);
  std::ifstream csv(out / "trajectory.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iter,F,mu_inf,step");
}

TEST_CASE("cli: reports are deterministic for a fixed config and seed") {
  fs::create_directories(work);
  write_config(work / "curved.json", small_curved_config());
  const fs::path o1 = work / "det1", o2 = work / "det2";
  REQUIRE(run("moment --config " + (work / "curved.json").string() + " --out " + o1.string() +
              " --seed 42") == 0);
  REQUIRE(run("moment --config " + (work / "curved.json").string() + " --out " + o2.string() +
              " --seed 42") == 0);
  CHECK(report_without_timings(o1 / "report.json") == report_without_timings(o2 / "report.json"));
}

TEST_CASE("cli: exit codes") {
  fs::create_directories(work);

  SECTION("malformed json gives 2") {
    std::ofstream f(work / "bad.json");
    f << "{ not valid";
    f.close();
    CHECK(run("geom --config " + (work / "bad.json").string()) == 2);
  }
  SECTION("missing config gives 2") {
    CHECK(run("geom --config " + (work / "does_not_exist.json").string()) == 2);
  }
  SECTION("mode above Nyquist/4 gives 2") {
    auto cfg = small_curved_config();
    cfg["potential"][0]["k"] = {5, 0}; // p/8 = 2
    write_config(work / "himode.json", cfg);
    CHECK(run("geom --config " + (work / "himode.json").string()) == 2);
  }
  SECTION("positivity-violating start gives 3") {
    auto cfg = small_curved_config();
    cfg["potential"][0]["amp"] = 1.4;
    write_config(work / "pos.json", cfg);
    CHECK(run("optimize --config " + (work / "pos.json").string()) == 3);
  }
  SECTION("unknown command gives 2") {
    CHECK(run("frobnicate --config x.json") == 2);
  }
}
