#pragma once

#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/io.hpp"
#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/model.hpp"
#include "mlmatvamp/rng.hpp"

#include <string>
#include <vector>

namespace mlmv {

// Scalar Monte-Carlo estimate.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Per-layer second moments tau0_ell of the true signal rows, ell = 0..L, from
// the initial ensemble pass: Q0_0 from the prior, odd layers through the
// singular-value law, even layers through the layer map applied to fresh
// Gaussian P0_{ell-1} ~ N(0, tau0_{ell-1}).
std::vector<MomentEstimate> se_initial_pass(const NetworkModel& model, Index samples, const Stream& rng);

// tau0_ell for ell = 0..L-1 from a fixed-seed initial pass; shared by the
// engine and the state evolution so both start from identical values.
std::vector<Mat> signal_second_moments(const NetworkModel& model);

// Gamma-_{0,ell} = eps I / trace(tau0_ell), ell = 0..L-1, with eps = kUninformativeScale.
// A near-zero start makes the zero message R-_0 = 0 carry no weight, so the
// first forward pass does not treat -Z_ell as independent evidence.
inline constexpr double kUninformativeScale = 1e-6;
std::vector<Mat> default_initial_gammas(const NetworkModel& model);

enum class SeInit {
  zero_message,          // Q-_0 = -Q0 row by row, matching R-_0 = 0 in the engine
  independent_gaussian,  // Q-_0 ~ N(0, tau-_0) independent of everything
};

struct SeOptions {
  Index samples = 50000;
  int n_iter = 20;
  std::uint64_t seed = 0x5E5Eull;
  PrecisionBounds bounds;
  std::vector<Mat> gamma_minus_init;  // empty: default_initial_gammas(model)
  SeInit init = SeInit::zero_message;
  std::vector<Mat> tau_minus_init;    // independent_gaussian only; empty: signal_second_moments(model)
  // Fresh Gaussian draws are whitened to their exact target moments (and made
  // orthogonal to the conditioning P0 block).
  bool moment_match = false;
  // Independent recursions with derived seeds. With R >= 2 every reported
  // standard error is the replicate spread over sqrt(R), which includes error
  // carried through the recursion; with R = 1 it is the row-sampling error of
  // the final step only.
  int replicates = 1;
  // Rows of a realized Z_0. When set, Q0_0 runs through them in balanced order
  // instead of sampling the prior, conditioning the recursion on that signal.
  Mat input_rows;

  void validate() const;
};

// Quantities at iteration k for the variable Z_ell.
struct SeCell {
  MomentEstimate k_plus;          // 2d x 2d second moment of (Q0_ell, Q+_{k,ell})
  MomentEstimate tau_minus;       // d x d second moment of Q-_{k,ell}
  Mat gamma_minus, lambda_plus, gamma_plus;
  Mat lambda_minus, gamma_minus_next;  // from the backward pass of iteration k
  MomentEstimate err_plus;        // second moment of (Zhat+ - Z) rows
  Mat err_plus_cov;               // covariance of vec(e^T e) over rows, d^2 x d^2
  MomentEstimate err_minus;
  Mat err_minus_cov;
  MomentEstimate joint_estimate;  // 2d x 2d second moment of (Z, Zhat+) rows
};

struct SeHistory {
  int num_layers = 0;
  Index samples = 0;
  std::vector<MomentEstimate> tau0;         // ell = 0..L
  std::vector<std::vector<SeCell>> cells;   // [k][ell], ell = 0..L-1
  int safeguard_events = 0;
  std::vector<SeHistory> runs;  // the replicates behind pooled values; empty for a single run

  const SeCell& cell(int k, int ell) const;
};

// Runs the recursion with the same row-wise denoisers as the engine.
SeHistory se_run(const NetworkModel& model, const SeOptions& opts, const DenoiserSuite& suite);

// E ||Zhat+_{k,ell} - Z_ell||_H^2 per row (plus side) or for Zhat- (minus side).
Estimate predict_layer_mse(const SeHistory& se, int ell, int k, const Mat& h, bool plus_side = true);

// E |(act(z) - act(zhat)) f2|^2 with (z, zhat) ~ N(0, K), K 2d x 2d.
Estimate predict_test_error(const Mat& k, const Vec& f2, const Activation& act, Index samples, const Stream& rng);

// Columns: k, layer, quantity, i, j, value, stderr.
void write_se_csv(const SeHistory& se, const std::string& path, const Provenance& prov);

}  // namespace mlmv
