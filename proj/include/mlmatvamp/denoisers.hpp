#pragma once

#include "mlmatvamp/core.hpp"
#include "mlmatvamp/model.hpp"
#include "mlmatvamp/quadrature.hpp"

#include <functional>
#include <optional>

namespace mlmv {

// Jacobians use the row-action convention: a perturbation dR of one row moves the
// matching output row by dR * J. An average jacobian is the mean of these d x d
// blocks over rows. For Bayes-optimal denoisers J = Gamma * posterior covariance.

struct PrecisionBundle {
  Mat gamma_minus;      // precision of the message on the output side of the layer
  Mat gamma_plus_prev;  // precision of the message on the input side of the layer
};

struct DenoiserResult {
  Mat zhat_plus;   // estimate of the layer output, n_out x cols
  Mat zhat_minus;  // estimate of the layer input, n_in x d
  Mat jac_plus;    // average d zhat_plus / d r_minus
  Mat jac_minus;   // average d zhat_minus / d r_plus_prev
};

struct EndpointResult {
  Mat zhat;
  Mat jac;
};

struct NewtonCfg {
  double tol = 1e-9;
  int max_iter = 100;
  double kink_smooth = 0.0;  // > 0 replaces relu by softplus of this width
};

struct DenoiserSuite {
  Mode mode = Mode::mmse;
  QuadratureCfg quad;
  NewtonCfg newton;
  std::optional<InputPrior> input_prior;  // overrides the model prior during inference
  int threads = 1;
};

// ---- linear layers

// Row kernel in the rotated basis. Row n couples x_n (output side) and u_n
// (input side) through the scalar s_n. The jacobian averages cover the first
// plus_rows rows for x and the first minus_rows rows for u.
struct LinearRowsResult {
  Mat x;
  Mat u;
  Mat jac_plus;
  Mat jac_minus;
};

LinearRowsResult linear_rows(const Vec& s, const Mat& b, const Mat& r_minus, const Mat& r_plus,
                             const std::optional<Mat>& noise_prec, const Mat& gamma_minus, const Mat& gamma_plus,
                             Index plus_rows, Index minus_rows);

DenoiserResult linear_denoise(const LinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                              const PrecisionBundle& prec);

// ---- nonlinear layers

DenoiserResult nonlinear_denoise_mmse(const NonlinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                                      const PrecisionBundle& prec, const QuadratureCfg& quad);

DenoiserResult nonlinear_denoise_map(const NonlinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                                     const PrecisionBundle& prec, const NewtonCfg& opt, int threads = 1);

// Output-side estimate and jacobian are skipped when want_plus is false.
DenoiserResult nonlinear_denoise(const NonlinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                                 const PrecisionBundle& prec, const DenoiserSuite& suite, bool want_plus = true);

// ---- endpoints

EndpointResult input_denoise(const InputPrior& prior, const Mat& r_minus, const Mat& gamma_minus, Mode mode,
                             const NewtonCfg& opt = {});

EndpointResult output_denoise(const NonlinearLayer& layer, const Mat& y, const Mat& r_plus, const Mat& gamma_plus,
                              Mode mode, const QuadratureCfg& quad = {}, const NewtonCfg& opt = {});

// ---- finite-difference validation

struct FdProbe {
  double scale = 1.0;
  double tol = 1e-6;
  // Rows only affect their own outputs: perturb whole columns at once.
  bool row_separable = false;
};

struct JacobianReport {
  Mat analytic;
  Mat numeric;
  double max_abs_dev = 0.0;
  bool pass = false;
};

// call(R) returns (output, analytic average jacobian) for the input R.
using DenoiserCall = std::function<std::pair<Mat, Mat>(const Mat&)>;

JacobianReport jacobian_check(const DenoiserCall& call, const Mat& at, const FdProbe& probe = {});

}  // namespace mlmv
