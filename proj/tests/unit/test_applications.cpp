#include "mlmatvamp/applications.hpp"
#include "mlmatvamp/vamp.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace mlmv;

TEST_CASE("two-layer builder shapes and replay") {
  const TwoLayerProblem p = build_two_layer(300, 100, 4, "sigmoid", 10.0, 1);
  CHECK(p.x.rows() == 300);
  CHECK(p.x.cols() == 100);
  CHECK(p.f2.size() == 4);
  CHECK(p.f1_true().rows() == 100);
  CHECK(p.f1_true().cols() == 4);
  CHECK(p.y().cols() == 1);
  CHECK(p.model.num_layers() == 2);
  CHECK(replay_residual(p.model, p.signals) <= 1e-12);
  CHECK(p.model.linear(1).noiseless());
}

TEST_CASE("noise-free two-layer output is exact") {
  const TwoLayerProblem p = build_two_layer(200, 50, 3, "tanh", std::numeric_limits<double>::infinity(), 2);
  CHECK(p.noise_var == 0.0);
  const Mat expect = (p.x * p.f1_true()).array().tanh().matrix() * p.f2;
  CHECK((p.y() - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("pre-activations have unit variance and the SNR is realized") {
  const TwoLayerProblem p = build_two_layer(10000, 100, 4, "sigmoid", 10.0, 3);
  const Mat pre = p.x * p.f1_true();
  const double var = pre.array().square().mean();
  CHECK(std::abs(var - 1.0) <= 0.05);
  const Mat clean = (1.0 / (1.0 + (-pre.array()).exp())).matrix() * p.f2;
  const Mat noise = p.y() - clean;
  const double snr_db = 10.0 * std::log10(clean.squaredNorm() / noise.squaredNorm());
  CHECK(std::abs(snr_db - 10.0) <= 0.5);
}

TEST_CASE("relu committee with positive second layer folds into the first layer") {
  const double inf = std::numeric_limits<double>::infinity();
  Vec f2(3);
  f2 << 0.5, 2.0, 1.3;
  const TwoLayerProblem p = build_two_layer(100, 30, 3, "relu", inf, 4, f2);
  const Mat folded = p.f1_true() * f2.asDiagonal();
  const Mat y = (p.x * folded).cwiseMax(0.0) * Vec::Ones(3);
  CHECK((y - p.y()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, p.y().cwiseAbs().maxCoeff()));
}

TEST_CASE("test error routes") {
  const TwoLayerProblem p = build_two_layer(2000, 100, 4, "sigmoid", 10.0, 5);
  const TestErrorReport exact = empirical_test_error(p, p.f1_true(), 1000, Stream(6), 20000);
  CHECK(exact.empirical == 0.0);
  // K is singular here; square roots of its rounding-level eigenvalues leave ~1e-8 per draw.
  CHECK(exact.k_route <= 1e-12);

  Stream rng(7);
  const Mat f1_hat = p.f1_true() + 0.3 * gaussian_matrix<double>(100, 4, rng);
  const TestErrorReport r = empirical_test_error(p, f1_hat, 10000, Stream(8), 200000);
  CHECK(std::abs(r.empirical - r.k_route) / r.k_route <= 0.05);
  CHECK((r.k - test_covariance(p.f1_true(), f1_hat)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("identity activation test error equals the quadratic form of K") {
  const TwoLayerProblem p = build_two_layer(500, 80, 3, "identity", 15.0, 9);
  Stream rng(10);
  const Mat f1_hat = p.f1_true() + 0.5 * gaussian_matrix<double>(80, 3, rng);
  const TestErrorReport r = empirical_test_error(p, f1_hat, 2000, Stream(11), 200000);
  const Index d = 3;
  const Mat diff = r.k.topLeftCorner(d, d) - r.k.topRightCorner(d, d) - r.k.bottomLeftCorner(d, d) +
                   r.k.bottomRightCorner(d, d);
  const double exact = p.f2.dot(diff * p.f2);
  CHECK(std::abs(r.k_route - exact) <= 3.0 * r.k_route_stderr);
}

TEST_CASE("normalized test MSE") {
  CHECK(normalized_test_mse(0.0, 0.2) == 1.0);
  CHECK(std::abs(normalized_test_mse(0.2, 0.2) - 2.0) <= 1e-15);
}

TEST_CASE("multi-task regression builders") {
  const MultiTaskProblem single = build_multi_task(80, 30, 1, "gaussian", 0.01, 12);
  CHECK(single.f_true().cols() == 1);
  CHECK(replay_residual(single.model, single.signals) <= 1e-12);

  const MultiTaskProblem sparse = build_multi_task(200, 100, 2, "group_lasso", 0.01, 13, 0.5);
  int active = 0;
  for (Index i = 0; i < sparse.f_true().rows(); ++i) active += sparse.f_true().row(i).norm() > 0.0;
  CHECK(active > 0);
  CHECK(active < 40);
  CHECK(sparse.inference_prior.kind == InputPrior::Kind::group_lasso);
  CHECK(support_fscore(sparse.f_true(), sparse.f_true(), 1e-12) == 1.0);
}

TEST_CASE("Gaussian multi-task fixed point equals the ridge solution") {
  const double nv = 1e-4;
  const MultiTaskProblem p = build_multi_task(120, 60, 2, "gaussian", nv, 14);
  VampOptions o;
  o.n_iter = 4;
  const VampTrace tr = vamp_run(p.model, p.y(), o, DenoiserSuite{});
  const Mat cov = p.model.prior.second_moment();
  // Row prior N(0, cov): normal equations X^T X F + nv F cov^{-1} = X^T Y, solved column-coupled.
  const Index n = p.x.cols(), d = 2;
  const Mat xtx = p.x.transpose() * p.x;
  Mat big = Mat::Zero(n * d, n * d);
  const Mat ci = cov.inverse();
  for (Index a = 0; a < d; ++a)
    for (Index b = 0; b < d; ++b)
      big.block(a * n, b * n, n, n) = (a == b ? xtx : Mat::Zero(n, n)) + nv * ci(a, b) * Mat::Identity(n, n);
  const Mat rhs = p.x.transpose() * p.y();
  Vec rv(n * d);
  for (Index a = 0; a < d; ++a) rv.segment(a * n, n) = rhs.col(a);
  const Vec sol = big.ldlt().solve(rv);
  Mat ridge(n, d);
  for (Index a = 0; a < d; ++a) ridge.col(a) = sol.segment(a * n, n);
  CHECK((tr.last.zhat_plus[0] - ridge).norm() / ridge.norm() <= 1e-6);
}

TEST_CASE("mixed regression with q = 1 is plain regression on the first vector") {
  const MixedRegressionProblem p = build_mixed_regression(150, 40, 1.0, 0.01, 15);
  CHECK(p.signals.xi[2].col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(replay_residual(p.model, p.signals) <= 1e-12);
  const Mat resid = p.y() - p.x * p.f_true().col(0);
  CHECK(std::abs(resid.array().square().mean() - 0.01) <= 0.005);
}
