#include "mlmatvamp/experiment.hpp"
#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/model_io.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mlmv;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mlmatvamp_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_two_layer() {
  ExperimentConfig c;
  c.two_layer.n = 200;
  c.two_layer.n_in = 40;
  c.two_layer.d = 2;
  c.trials = 2;
  c.seed = 5;
  c.vamp.n_iter = 3;
  c.se.samples = 2000;
  c.test.n_test = 200;
  c.test.k_samples = 2000;
  c.compare.k_max = 2;
  c.validate();
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& p) { return Json::parse(read_file(p)); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MLMATVAMP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config JSON round-trips and the hash ignores the thread count") {
  ExperimentConfig c = tiny_two_layer();
  c.sweep.variable = "n";
  c.sweep.values = {100, 200};
  c.quadrature.order = 12;
  c.compare.layers = {0, 1};
  const Json j = c.to_json();
  CHECK(j.at("schema") == 1);
  const ExperimentConfig back = ExperimentConfig::from_json(Json::parse(j.dump()));
  CHECK(back.to_json() == j);
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  ExperimentConfig threaded = c;
  threaded.threads = 4;
  CHECK(threaded.hash() == c.hash());
  ExperimentConfig other = c;
  other.seed = 6;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("a noise-free two-layer output round-trips as the string inf") {
  Json j = Json::parse(R"({"schema": 1, "two_layer": {"snr_db": "inf"}, "sweep": {"variable": "snr_db", "values": [5, 10]}})");
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(std::isinf(c.two_layer.snr_db));
  CHECK(c.to_json().at("two_layer").at("snr_db") == "inf");
  CHECK(ExperimentConfig::from_json(c.to_json()).hash() == c.hash());
  CHECK(sweep_point(c, 1).two_layer.snr_db == 10.0);
  j["two_layer"]["snr_db"] = "loud";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), Error);
}

TEST_CASE("defaults parse from a minimal config") {
  const ExperimentConfig c = ExperimentConfig::from_json(Json{{"schema", 1}});
  const ExperimentConfig d;
  CHECK(c.to_json() == d.to_json());
}

TEST_CASE("config errors are reported as configuration errors") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"schema", 2}}), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"schema", 1}, {"trails", 3}}), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"schema", 1}, {"trials", "three"}}), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(Json{{"schema", 1}, {"two_layer", {{"n", 10.5}}}}), Error);
  ExperimentConfig bad;
  bad.vamp.damping = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  try {
    ExperimentConfig::from_json(Json{{"schema", 1}, {"application", "nope"}}).validate();
    FAIL("expected a configuration error");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == 2);
  }
  CHECK(exit_code_for(Error(ErrorKind::diverged, "x")) == 3);
  CHECK(exit_code_for(Error(ErrorKind::invalid_pairing, "x")) == 2);
}

TEST_CASE("sweep points rewrite the application block") {
  ExperimentConfig c = tiny_two_layer();
  c.sweep.variable = "snr_db";
  c.sweep.values = {10.0, 15.0};
  CHECK(sweep_size(c) == 2);
  CHECK(sweep_point(c, 1).two_layer.snr_db == 15.0);
  CHECK(sweep_value(c, 0) == 10.0);
  c.sweep.variable = "n";
  c.sweep.values = {100.5};
  CHECK_THROWS_AS(sweep_point(c, 0), Error);
}

TEST_CASE("trials at one sweep point share the fixed second layer") {
  const ExperimentConfig c = tiny_two_layer();
  const std::uint64_t ps = point_seed(c.seed, 0);
  const Instance a = build_instance(c, trial_seed(c.seed, 0, 0), ps);
  const Instance b = build_instance(c, trial_seed(c.seed, 0, 1), ps);
  REQUIRE(a.two_layer.has_value());
  CHECK(a.two_layer->f2 == b.two_layer->f2);
  CHECK(a.two_layer->f1_true() != b.two_layer->f1_true());
}

TEST_CASE("simulate writes provenance-stamped artifacts deterministically") {
  const ExperimentConfig c = tiny_two_layer();
  const fs::path d1 = fresh_dir("sim1"), d2 = fresh_dir("sim2");
  std::ostringstream log;
  CHECK(cmd_simulate(c, d1.string(), log) == 0);
  ExperimentConfig threaded = c;
  threaded.threads = 2;
  CHECK(cmd_simulate(threaded, d2.string(), log) == 0);
  for (const char* f : {"summary.csv", "curves.csv", "summary.json", "config.json", "traces/trace_p0_t0.csv",
                        "traces/trace_p0_t1.csv"})
    CHECK(fs::exists(d1 / f));
  for (const char* f : {"summary.csv", "curves.csv", "traces/trace_p0_t1.csv"}) CHECK(read_file(d1 / f) == read_file(d2 / f));
  const std::string summary = read_file(d1 / "summary.csv");
  CHECK(summary.rfind("config_hash,seed,point,sweep_variable,sweep_value,quantity,mean,sd,stderr,count\n", 0) == 0);
  std::istringstream rows(summary);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) CHECK(line.rfind(c.hash() + ",", 0) == 0);
  const Json j = read_json(d1 / "summary.json");
  CHECK(j.at("config_hash") == c.hash());
  CHECK(j.at("seed") == c.seed);
  CHECK(ExperimentConfig::from_json(read_json(d1 / "config.json")).hash() == c.hash());
}

TEST_CASE("se writes the per-point SE table") {
  const ExperimentConfig c = tiny_two_layer();
  const fs::path d = fresh_dir("se");
  std::ostringstream log;
  CHECK(cmd_se(c, d.string(), log) == 0);
  const std::string table = read_file(d / "se_p0.csv");
  CHECK(table.rfind("config_hash,seed,k,layer,quantity,i,j,value,stderr\n", 0) == 0);
  CHECK(read_json(d / "summary.json").at("command") == "se");
}

TEST_CASE("comparing a summary with itself gives zero differences") {
  ExperimentConfig c = tiny_two_layer();
  const fs::path sim = fresh_dir("cmp_sim"), out = fresh_dir("cmp_out");
  std::ostringstream log;
  REQUIRE(cmd_simulate(c, sim.string(), log) == 0);
  c.compare.simulate = sim.string();
  c.compare.se = (sim / "summary.json").string();
  CHECK(cmd_compare(c, out.string(), log) == 0);
  const Json j = read_json(out / "compare.json");
  CHECK(!j.at("rows").empty());
  for (const Json& row : j.at("rows")) CHECK(row.at("diff").get<double>() == 0.0);
}

TEST_CASE("compare rejects mismatched sweep grids") {
  ExperimentConfig c = tiny_two_layer();
  const fs::path a = fresh_dir("grid_a"), b = fresh_dir("grid_b"), out = fresh_dir("grid_out");
  std::ostringstream log;
  REQUIRE(cmd_simulate(c, a.string(), log) == 0);
  ExperimentConfig swept = c;
  swept.sweep.variable = "n";
  swept.sweep.values = {150, 200};
  swept.trials = 1;
  REQUIRE(cmd_simulate(swept, b.string(), log) == 0);
  c.compare.simulate = a.string();
  c.compare.se = b.string();
  CHECK_THROWS_AS(cmd_compare(c, out.string(), log), Error);
}

TEST_CASE("linear-Gaussian benchmark lies inside the comparison bands") {
  Stream rng(9);
  const Index n0 = 300, n1 = 450, d = 2;
  NetworkModel m;
  m.d = d;
  m.n0 = n0;
  m.prior = InputPrior::gaussian(Mat::Identity(d, d));
  m.layers.push_back(LinearLayer::make(gaussian_matrix<double>(n1, n0, rng) / std::sqrt(static_cast<double>(n0)),
                                       Mat::Zero(n1, d), Mat(3.0 * Mat::Identity(d, d))));
  m.layers.push_back(NonlinearLayer::additive(Activation::identity(), Mat(0.3 * Mat::Identity(d, d))));
  ExperimentConfig c;
  c.application = "model";
  c.model = model_to_json(m);
  c.trials = 10;
  c.seed = 3;
  c.vamp.n_iter = 3;
  c.se.samples = 20000;
  c.se.replicates = 4;
  c.compare.k_max = 2;
  c.compare.layers = {0, 1};
  c.validate();
  const fs::path out = fresh_dir("linear_cmp");
  std::ostringstream log;
  CHECK(cmd_compare(c, out.string(), log) == 0);
  const Json j = read_json(out / "compare.json");
  CHECK(j.at("gating_failures") == 0);
}

TEST_CASE("command line exit codes") {
  const fs::path d = fresh_dir("cli");
  const fs::path good = d / "good.json";
  const fs::path bad = d / "bad.json";
  Json g = tiny_two_layer().to_json();
  g["trials"] = 1;
  std::ofstream(good) << g.dump(2);
  std::ofstream(bad) << Json{{"schema", 1}, {"unknown_key", 1}}.dump();
  CHECK(run_cli("simulate --config " + good.string() + " --out " + (d / "out").string() + " --threads 2") == 0);
  CHECK(fs::exists(d / "out" / "summary.csv"));
  CHECK(run_cli("simulate --config " + bad.string() + " --out " + (d / "bad").string()) == 2);
  CHECK(run_cli("simulate --config " + (d / "missing.json").string() + " --out " + (d / "m").string()) == 2);
  CHECK(run_cli("simulate --out " + (d / "x").string()) == 2);
  CHECK(run_cli("--help") == 0);
}
