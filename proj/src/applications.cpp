#include "mlmatvamp/applications.hpp"

#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/state_evolution.hpp"

#include <cmath>
#include <limits>

namespace mlmv {

namespace {

void require_positive(Index v, const char* what) {
  if (v < 1) throw Error(ErrorKind::invalid_config, std::string(what) + " must be >= 1");
}

Mat scaled_design(Index n, Index p, Stream rng) {
  return gaussian_matrix<double>(n, p, rng) / std::sqrt(static_cast<double>(p));
}

NetworkModel linear_then(const InputPrior& prior, Index p, const Mat& x, NonlinearLayer out) {
  NetworkModel m;
  m.d = prior.d;
  m.n0 = p;
  m.prior = prior;
  m.layers.push_back(LinearLayer::make(x, Mat::Zero(x.rows(), prior.d), std::nullopt));
  m.layers.push_back(std::move(out));
  m.validate();
  return m;
}

}  // namespace

TwoLayerProblem build_two_layer(Index n, Index n_in, Index d, const std::string& activation, double snr_db,
                                std::uint64_t seed, const std::optional<Vec>& f2) {
  require_positive(n, "N");
  require_positive(n_in, "N_in");
  require_positive(d, "d");
  if (std::isnan(snr_db)) throw Error(ErrorKind::invalid_config, "snr_db must be a number");
  const Stream root(seed);
  TwoLayerProblem p;
  p.act = Activation::from_name(activation);
  p.snr_db = snr_db;
  p.x = scaled_design(n, n_in, root.derive("design"));
  if (f2) {
    if (f2->size() != d) throw Error(ErrorKind::invalid_dimension, "f2 must have d entries");
    p.f2 = *f2;
  } else {
    Stream f2_rng = root.derive("second-layer");
    p.f2 = gaussian_matrix<double>(d, 1, f2_rng).col(0);
  }
  const Stream signal_rng = root.derive("signals");

  // Signal power is measured on the realized F1; the noise is then rescaled.
  NetworkModel probe = linear_then(InputPrior::gaussian(Mat::Identity(d, d)), n_in, p.x,
                                   NonlinearLayer::committee(p.act, p.f2, 1.0));
  const SignalStack clean = generate_signals(probe, signal_rng);
  const Mat out = probe.nonlinear(2).phi(clean.z[1]);
  const double power = out.squaredNorm() / static_cast<double>(out.size());
  p.noise_var = std::isinf(snr_db) && snr_db > 0 ? 0.0 : power / std::pow(10.0, snr_db / 10.0);
  p.model = linear_then(probe.prior, n_in, p.x, NonlinearLayer::committee(p.act, p.f2, p.noise_var));
  p.signals = generate_signals(p.model, signal_rng);
  return p;
}

MultiTaskProblem build_multi_task(Index n, Index p, Index d, const std::string& prior, double noise_var,
                                  std::uint64_t seed, double prior_param) {
  require_positive(n, "N");
  require_positive(p, "p");
  require_positive(d, "d");
  if (!(noise_var > 0.0)) throw Error(ErrorKind::invalid_config, "multi-task noise variance must be > 0");
  InputPrior gen;
  InputPrior inf;
  if (prior == "gaussian") {
    gen = inf = InputPrior::gaussian(Mat::Identity(d, d));
  } else if (prior == "bernoulli_gaussian") {
    gen = inf = InputPrior::bernoulli_gaussian(d, prior_param, 1.0);
  } else if (prior == "group_lasso") {
    gen = InputPrior::bernoulli_gaussian(d, 0.1, 1.0);
    inf = InputPrior::group_lasso(d, prior_param);
  } else {
    throw Error(ErrorKind::invalid_config, "unknown multi-task prior '" + prior + "'");
  }
  const Stream root(seed);
  MultiTaskProblem out;
  out.noise_var = noise_var;
  out.inference_prior = inf;
  out.x = scaled_design(n, p, root.derive("design"));
  out.model = linear_then(gen, p, out.x,
                          NonlinearLayer::additive(Activation::identity(), noise_var * Mat::Identity(d, d)));
  out.signals = generate_signals(out.model, root.derive("signals"));
  return out;
}

MixedRegressionProblem build_mixed_regression(Index n, Index p, double q_prob, double noise_var, std::uint64_t seed) {
  require_positive(n, "N");
  require_positive(p, "p");
  if (!(q_prob >= 0.0 && q_prob <= 1.0)) throw Error(ErrorKind::invalid_config, "q_prob must lie in [0, 1]");
  if (!(noise_var > 0.0)) throw Error(ErrorKind::invalid_config, "mixed regression noise variance must be > 0");
  const Stream root(seed);
  MixedRegressionProblem out;
  out.q_prob = q_prob;
  out.noise_var = noise_var;
  out.x = scaled_design(n, p, root.derive("design"));
  const Mat e1 = Mat::Identity(2, 2).col(0);
  const Mat e2 = Mat::Identity(2, 2).col(1);
  out.model = linear_then(InputPrior::gaussian(Mat::Identity(2, 2)), p, out.x,
                          NonlinearLayer::linear_mixture({e1, e2}, {q_prob, 1.0 - q_prob},
                                                         Mat::Constant(1, 1, noise_var)));
  out.signals = generate_signals(out.model, root.derive("signals"));
  return out;
}

Mat test_covariance(const Mat& f1, const Mat& f1_hat) {
  if (f1.rows() != f1_hat.rows() || f1.cols() != f1_hat.cols())
    throw Error(ErrorKind::invalid_dimension, "F1 and its estimate differ in shape");
  Mat both(f1.rows(), 2 * f1.cols());
  both << f1, f1_hat;
  return symmetrize(Mat(both.transpose() * both / static_cast<double>(f1.rows())));
}

TestErrorReport empirical_test_error(const TwoLayerProblem& problem, const Mat& f1_hat, Index n_test,
                                     const Stream& rng, Index k_samples) {
  const Mat& f1 = problem.f1_true();
  if (n_test < 2) throw Error(ErrorKind::invalid_config, "n_test must be >= 2");
  TestErrorReport rep;
  rep.k = test_covariance(f1, f1_hat);
  const Mat x = scaled_design(n_test, f1.rows(), rng.derive("test-design"));
  const Mat u = x * f1;
  const Mat uh = x * f1_hat;
  const Vec diff =
      (problem.act.value(u.array()) - problem.act.value(uh.array())).matrix() * problem.f2;
  const Arr sq = diff.array().square();
  rep.empirical = sq.mean();
  rep.empirical_stderr =
      std::sqrt((sq - rep.empirical).square().sum() / static_cast<double>(n_test - 1) / static_cast<double>(n_test));
  const Estimate kr = predict_test_error(rep.k, problem.f2, problem.act, k_samples, rng.derive("k-route"));
  rep.k_route = kr.value;
  rep.k_route_stderr = kr.std_error;
  rep.ratio = rep.k_route > 0.0 ? rep.empirical / rep.k_route
                                : (rep.empirical == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
  return rep;
}

double normalized_test_mse(double test_error, double noise_var) {
  if (!(noise_var > 0.0)) throw Error(ErrorKind::invalid_config, "normalized test MSE needs a positive noise floor");
  return (test_error + noise_var) / noise_var;
}

double support_fscore(const Mat& f_true, const Mat& f_hat, double threshold) {
  if (f_true.rows() != f_hat.rows()) throw Error(ErrorKind::invalid_dimension, "support_fscore: row counts differ");
  Index tp = 0, fp = 0, fn = 0;
  for (Index i = 0; i < f_true.rows(); ++i) {
    const bool t = f_true.row(i).norm() > 0.0;
    const bool h = f_hat.row(i).norm() > threshold;
    tp += t && h;
    fp += !t && h;
    fn += t && !h;
  }
  if (tp == 0) return fp == 0 && fn == 0 ? 1.0 : 0.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace mlmv
