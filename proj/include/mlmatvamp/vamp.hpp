#pragma once

#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/io.hpp"
#include "mlmatvamp/model.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mlmv {

// Messages and precisions for the variables Z_0 ... Z_{L-1}, all indexed by ell.
struct VampState {
  std::vector<Mat> r_minus, gamma_minus;                    // inputs to the forward pass
  std::vector<Mat> zhat_plus, lambda_plus, gamma_plus, r_plus;
  std::vector<Mat> zhat_minus, lambda_minus;                // backward pass of the same iteration
  std::vector<Mat> r_minus_next, gamma_minus_next;          // messages for the next iteration
};

enum class InitMode {
  zero,             // R-_0 = 0
  oracle_gaussian,  // R-_0 = Z_0 + N(0, tau-_0): only with ground truth, for diagnostics
};

struct VampOptions {
  int n_iter = 20;
  double damping = 1.0;  // convex weight of the new value for R and Gamma
  PrecisionBounds bounds;
  std::vector<Mat> gamma_minus_init;  // empty: default_initial_gammas(model)
  InitMode init = InitMode::zero;
  std::vector<Mat> oracle_tau;        // per-layer tau-_0 for oracle_gaussian; empty: signal_second_moments(model)
  std::uint64_t init_seed = 0x1A1Dull;
  std::optional<Mat> mse_weight;      // H in (1/n)||Zhat - Z||_H^2; identity when absent
  bool keep_snapshots = true;

  void validate() const;
};

struct LayerMetrics {
  double mse_plus = 0.0;   // of Zhat+_{k,ell} against Z_ell; NaN without ground truth
  double mse_minus = 0.0;  // of Zhat-_{k,ell}
  double gamma_plus_trace = 0.0;
  double gamma_minus_trace = 0.0;
  double lambda_plus_trace = 0.0;
  double lambda_minus_trace = 0.0;
  int safeguard_events = 0;  // precision clamps while forming messages for Z_ell in this iteration
};

struct IterationRecord {
  int k = 0;
  std::vector<LayerMetrics> layers;
  double seconds = 0.0;
};

struct VampTrace {
  int num_layers = 0;  // L
  std::vector<IterationRecord> iterations;
  std::vector<VampState> snapshots;  // one per iteration when kept
  VampState last;
  int safeguard_events = 0;
};

// Thrown on non-finite messages; carries the trace recorded so far.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, std::shared_ptr<VampTrace> trace)
      : Error(ErrorKind::diverged, what), trace_(std::move(trace)) {}
  const VampTrace& trace() const { return *trace_; }

 private:
  std::shared_ptr<VampTrace> trace_;
};

VampTrace vamp_run(const NetworkModel& model, const Mat& y, const VampOptions& opts, const DenoiserSuite& suite,
                   const SignalStack* truth = nullptr);

struct FixedPointReport {
  std::vector<double> consistency;     // ||Zhat+ - Zhat-||_F / ||Zhat+||_F per ell, last iteration
  std::vector<double> message_motion;  // ||R+_k - R+_{k-1}||_F + ||R-_k - R-_{k-1}||_F per ell
  std::optional<double> map_gradient;  // max-abs gradient of the global MAP objective at Zhat+
  double map_gradient_scale = 1.0;
};

FixedPointReport fixed_point_report(const VampTrace& trace, const NetworkModel& model, const Mat& y,
                                    const DenoiserSuite& suite);

// Negative log joint density of (Z_0, ..., Z_{L-1}) given y for models whose
// layers all have densities, with its gradient in each block.
double map_objective(const NetworkModel& model, const Mat& y, const std::vector<Mat>& z,
                     std::vector<Mat>* grad = nullptr, const std::optional<InputPrior>& prior_override = std::nullopt);

// One row per (k, ell, metric): k,layer,metric,value.
void write_trace_csv(const VampTrace& trace, const std::string& path, const Provenance& prov);

}  // namespace mlmv
