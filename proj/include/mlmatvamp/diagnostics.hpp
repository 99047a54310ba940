#pragma once

#include "mlmatvamp/io.hpp"
#include "mlmatvamp/model.hpp"
#include "mlmatvamp/model_io.hpp"
#include "mlmatvamp/state_evolution.hpp"
#include "mlmatvamp/vamp.hpp"

#include <string>
#include <vector>

namespace mlmv {

// Rotated errors for one (k, ell). For even ell the input-side rotation of
// layer ell+1 is applied to the forward quantities; for odd ell the output-side
// rotation of layer ell is applied to the backward error, and also to the
// forward pair used for the K+ comparison. Rows of an odd layer beyond its rank
// are rotated by a Haar completion of the singular basis.
struct CellErrors {
  int k = 0;
  int ell = 0;
  Mat q_minus;    // backward error of Z_ell, n x d
  Mat plus_pair;  // [p0_ell, p+_ell]: transformed signal and forward error of Z_ell, n x 2d
  Mat prev;       // quantities that must be uncorrelated with q_minus: [p0, p+] of Z_{ell-1}, or Z_0 at ell = 0
  Mat w;          // layer-ell randomness paired with q_minus rows (may have zero columns)
};

struct TransformedErrors {
  int num_layers = 0;
  std::vector<std::vector<CellErrors>> cells;  // [k][ell]
};

// Needs snapshots in the trace; rows of prev and w are paired with the first
// min(n_out, n_in) rows of q_minus at odd layers.
TransformedErrors compute_transformed_errors(const VampTrace& trace, const SignalStack& signals,
                                             const NetworkModel& model);

struct GaussianityOptions {
  double band = 5.0;  // standard errors for covariance and cross-moment checks
  double kurtosis_band = 5.0;
};

struct CellReport {
  int k = 0;
  int ell = 0;
  double tau_max_z = 0.0;    // worst |Cov(q-) - tau-| in combined standard errors
  double kplus_max_z = 0.0;  // worst |M2(p0, p+) - K+|
  double prev_max_z = 0.0;   // worst standardized cross moment of q- with prev
  double w_max_z = 0.0;      // worst standardized cross moment of q- with w
  double band = 0.0;         // limit for the four z scores
  Vec excess_kurtosis;       // per coordinate of q-
  double kurtosis_limit = 0.0;
  bool covariance_pass = false;
  bool independence_pass = false;
  bool kurtosis_pass = false;
  bool pass() const { return covariance_pass && independence_pass && kurtosis_pass; }
};

struct GaussianityReport {
  std::vector<CellReport> cells;
  double pass_rate = 0.0;             // fraction of cells passing every check
  double covariance_pass_rate = 0.0;
  double independence_pass_rate = 0.0;
  double kurtosis_pass_rate = 0.0;
};

// Entrywise checks on one cell. Targets carry their own Monte-Carlo errors.
CellReport check_cell(const CellErrors& c, const MomentEstimate& tau_minus, const MomentEstimate& k_plus,
                      const GaussianityOptions& opt = {});

// Cells with k <= max_k that the state evolution covers.
GaussianityReport gaussianity_report(const TransformedErrors& errs, const SeHistory& se, int max_k,
                                     const GaussianityOptions& opt = {});

// Excess kurtosis of each column about zero.
Vec excess_kurtosis(const Mat& x);

// Largest |mean(x_a y_b)| / stderr over column pairs; zero-variance products are skipped.
double max_standardized_cross_moment(const Mat& x, const Mat& y);

struct W2Proxy {
  double value = 0.0;
  double std_error = 0.0;  // spread over batches of the sample
};

// moments_only: 2-Wasserstein distance between Gaussians with the sample
// moments of a and b. Otherwise exact 1-d distance by quantile coupling (d = 1 only).
W2Proxy wasserstein2_proxy(const Mat& a, const Mat& b, bool moments_only, int batches = 10);

Json report_to_json(const GaussianityReport& r);
std::string report_table(const GaussianityReport& r);
void write_report_csv(const GaussianityReport& r, const std::string& path, const Provenance& prov);

}  // namespace mlmv
