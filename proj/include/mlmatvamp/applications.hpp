#pragma once

#include "mlmatvamp/model.hpp"
#include "mlmatvamp/rng.hpp"

#include <optional>
#include <string>

namespace mlmv {

// Learning the first layer of Y = act(X F1) F2 + noise with X and F2 known.
// As a network: Z_0 = F1, layer 1 is the noiseless linear map X, layer 2 the
// committee output.
struct TwoLayerProblem {
  NetworkModel model;
  SignalStack signals;  // z[0] = F1, z[1] = X F1, z[2] = Y
  Mat x;                // N x N_in, entries N(0, 1/N_in)
  Vec f2;               // d
  Activation act;
  double snr_db = 0.0;
  double noise_var = 0.0;

  const Mat& f1_true() const { return signals.z[0]; }
  const Mat& y() const { return signals.z[2]; }
};

// F1, F2 i.i.d. N(0, 1); noise variance = mean power of act(X F1) F2 / 10^(snr_db/10).
// snr_db = +inf gives a noiseless output. A given f2 replaces the drawn one.
TwoLayerProblem build_two_layer(Index n, Index n_in, Index d, const std::string& activation, double snr_db,
                                std::uint64_t seed, const std::optional<Vec>& f2 = std::nullopt);

// Y = X F + noise with F drawn row-wise from a row prior.
struct MultiTaskProblem {
  NetworkModel model;            // carries the generating prior
  SignalStack signals;           // z[0] = F, z[1] = X F, z[2] = Y
  Mat x;                         // N x p, entries N(0, 1/p)
  InputPrior inference_prior;    // group_lasso for MAP, otherwise equal to the generating prior
  double noise_var = 0.0;

  const Mat& f_true() const { return signals.z[0]; }
  const Mat& y() const { return signals.z[2]; }
};

// prior: gaussian | bernoulli_gaussian (param = active fraction) | group_lasso
// (param = lambda; data drawn row-sparse with 10% active rows).
MultiTaskProblem build_multi_task(Index n, Index p, Index d, const std::string& prior, double noise_var,
                                  std::uint64_t seed, double prior_param = 0.1);

// y_i = q_i x_i^T f1 + (1 - q_i) x_i^T f2 + v_i with P(q_i = 1) = q_prob.
struct MixedRegressionProblem {
  NetworkModel model;   // Z_0 = [f1 f2], layer 1 = X, layer 2 = two-component linear mixture
  SignalStack signals;  // xi[2] column 0 holds the component: 0 for f1, 1 for f2
  Mat x;                // N x p, entries N(0, 1/p)
  double q_prob = 0.5;
  double noise_var = 0.0;

  const Mat& f_true() const { return signals.z[0]; }
  const Mat& y() const { return signals.z[2]; }
};

MixedRegressionProblem build_mixed_regression(Index n, Index p, double q_prob, double noise_var, std::uint64_t seed);

struct TestErrorReport {
  double empirical = 0.0;         // mean |(act(x F1) - act(x F1hat)) F2|^2 over fresh x
  double empirical_stderr = 0.0;
  double k_route = 0.0;           // same expectation through the pre-activation covariance K
  double k_route_stderr = 0.0;
  double ratio = 0.0;             // empirical / k_route
  Mat k;                          // 2d x 2d covariance of (x F1, x F1hat)
};

// Pre-activation covariance of (x F1, x F1hat) for x ~ N(0, I / N_in).
Mat test_covariance(const Mat& f1, const Mat& f1_hat);

TestErrorReport empirical_test_error(const TwoLayerProblem& problem, const Mat& f1_hat, Index n_test,
                                     const Stream& rng, Index k_samples = 200000);

// Test MSE against noisy outputs over the noise floor: (error + noise_var) / noise_var.
double normalized_test_mse(double test_error, double noise_var);

// F-score of the row support of f_hat (rows with norm > threshold) against f_true.
double support_fscore(const Mat& f_true, const Mat& f_hat, double threshold);

}  // namespace mlmv
