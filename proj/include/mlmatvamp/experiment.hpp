#pragma once

#include "mlmatvamp/applications.hpp"
#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/io.hpp"
#include "mlmatvamp/model_io.hpp"
#include "mlmatvamp/quadrature.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mlmv {

// Experiment configuration, schema 1. Every field has a default; to_json writes
// all of them so the effective configuration round-trips. See docs/config_format.md.
struct ExperimentConfig {
  static constexpr int kSchema = 1;

  std::string application = "two_layer";  // two_layer | multi_task | mixed_regression | model

  struct TwoLayer {
    Index n = 2000;
    Index n_in = 100;
    Index d = 4;
    std::string activation = "sigmoid";
    double snr_db = 10.0;
  } two_layer;

  struct MultiTask {
    Index n = 500;
    Index p = 200;
    Index d = 2;
    std::string prior = "gaussian";
    double noise_var = 0.01;
    double prior_param = 0.1;
  } multi_task;

  struct MixedRegression {
    Index n = 1000;
    Index p = 200;
    double q_prob = 0.5;
    double noise_var = 0.01;
  } mixed_regression;

  Json model;              // inline network model (application "model")
  std::string model_file;  // or a path to one, relative to the config file

  struct Sweep {
    std::string variable;  // a numeric field of the application block; empty for a single point
    std::vector<double> values;
  } sweep;

  int trials = 1;
  std::uint64_t seed = 1;
  int threads = 1;  // excluded from the config hash

  struct Vamp {
    int n_iter = 20;
    double damping = 1.0;
    std::string mode = "mmse";  // mmse | map
    PrecisionBounds bounds;
  } vamp;

  QuadratureCfg quadrature;
  NewtonCfg newton;

  struct Se {
    Index samples = 50000;
    int replicates = 1;
    bool moment_match = false;
    bool condition_on_signal = false;  // run Q0_0 through the realized Z_0 of the SE instance
  } se;

  struct Test {
    Index n_test = 1000;
    Index k_samples = 200000;
  } test;

  struct Compare {
    std::string simulate;  // summary.json or the directory holding it; empty: run simulate here
    std::string se;        // likewise for the SE summary
    double rel_band = 0.10;
    double se_band = 3.0;
    int k_min = 0;  // iterations compared on the curves, 0-based
    int k_max = 9;
    std::vector<int> layers{0};
  } compare;

  struct Diagnose {
    int max_k = 5;
    double band = 5.0;
    double kurtosis_band = 5.0;
    double min_pass_rate = 0.95;
    Index se_samples = 10000;
    int se_replicates = 4;
  } diagnose;

  std::string base_dir;  // directory of the config file; not serialized

  Json to_json() const;
  static ExperimentConfig from_json(const Json& j, const std::string& base_dir = ".");

  // FNV-1a over the canonical JSON without the thread count, as 16 hex digits.
  std::string hash() const;
  void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path);

// One sweep point: the configuration with the sweep value applied.
ExperimentConfig sweep_point(const ExperimentConfig& cfg, std::size_t point);
std::size_t sweep_size(const ExperimentConfig& cfg);
double sweep_value(const ExperimentConfig& cfg, std::size_t point);

// A generated problem: model, signals and the pieces needed for test error.
struct Instance {
  NetworkModel model;
  SignalStack signals;
  std::optional<InputPrior> inference_prior;
  std::optional<TwoLayerProblem> two_layer;

  const Mat& y() const { return signals.z.back(); }
};

// seed drives everything redrawn per trial; point_seed the parts held fixed over
// the trials of one sweep point (the second layer F2 of the two-layer problem).
Instance build_instance(const ExperimentConfig& point_cfg, std::uint64_t seed, std::uint64_t point_seed);

std::uint64_t point_seed(std::uint64_t master, std::size_t point);
DenoiserSuite make_suite(const ExperimentConfig& cfg, const Instance& inst, int threads);

// Seeds derived from the master seed.
std::uint64_t trial_seed(std::uint64_t master, std::size_t point, int trial);

// Commands write their artifacts under out_dir and return the process exit code:
// 0 success, 1 gating failure. Configuration errors throw Error(invalid_config or
// invalid_pairing); numerical failures throw other Error kinds.
int cmd_simulate(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);
int cmd_se(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);
int cmd_compare(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);
int cmd_diagnose(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);

// Maps an exception to the CLI exit code: 2 for configuration errors, 3 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace mlmv
