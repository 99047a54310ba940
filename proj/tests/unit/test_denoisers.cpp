#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/linalg.hpp"

#include "../oracles/dense_posterior.hpp"
#include "../oracles/integration.hpp"

#include <doctest.h>

#include <cmath>

using namespace mlmv;

namespace {

Mat spd(Index d, Stream& rng, double ridge) {
  const Mat a = gaussian_matrix<double>(d, d, rng);
  return a * a.transpose() / static_cast<double>(d) + ridge * Mat::Identity(d, d);
}

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// Row-wise Gaussian posterior of (u, z) for z = u + xi, xi ~ N(0, sigma), with
// messages N(r_plus, gp^{-1}) on u and N(r_minus, gm^{-1}) on z.
std::pair<Mat, Mat> identity_posterior(const Mat& sigma, const Mat& gm, const Mat& gp, const Mat& rm, const Mat& rp) {
  const Index d = sigma.rows();
  const Mat si = sigma.inverse();
  Mat h(2 * d, 2 * d);
  h << gp + si, -si, -si, si + gm;
  const Mat hi = h.inverse();
  Mat lin(rm.rows(), 2 * d);
  lin << rp * gp, rm * gm;
  const Mat sol = lin * hi;
  return {sol.leftCols(d), sol.rightCols(d)};
}

}  // namespace

TEST_CASE("linear denoiser decouples as the layer noise precision vanishes") {
  Stream rng(1);
  const Index n_out = 6, n_in = 4, d = 2;
  const LinearLayer layer = LinearLayer::make(gaussian_matrix<double>(n_out, n_in, rng), gaussian_matrix<double>(n_out, d, rng),
                                              Mat(1e-12 * Mat::Identity(d, d)));
  const Mat rm = gaussian_matrix<double>(n_out, d, rng);
  const Mat rp = gaussian_matrix<double>(n_in, d, rng);
  const DenoiserResult res = linear_denoise(layer, rm, rp, {spd(d, rng, 0.5), spd(d, rng, 0.5)});
  CHECK(max_abs(res.zhat_plus - rm) <= 1e-9);
  CHECK(max_abs(res.zhat_minus - rp) <= 1e-9);
}

TEST_CASE("rows with zero singular value decouple from the input side") {
  Stream rng(2);
  const Index d = 2;
  Vec s(3);
  s << 0.0, 1.5, 0.0;
  const Mat b = gaussian_matrix<double>(3, d, rng);
  const Mat rm = gaussian_matrix<double>(3, d, rng);
  const Mat rp = gaussian_matrix<double>(3, d, rng);
  const Mat np = spd(d, rng, 1.0), gm = spd(d, rng, 0.5), gp = spd(d, rng, 0.5);
  const LinearRowsResult r = linear_rows(s, b, rm, rp, np, gm, gp, 3, 3);
  for (Index n : {0, 2}) {
    const RowVec expect = (b.row(n) * np + rm.row(n) * gm) * (np + gm).inverse();
    CHECK(max_abs(r.x.row(n) - expect) <= 1e-12);
    CHECK(max_abs(r.u.row(n) - rp.row(n)) <= 1e-12);
  }
}

TEST_CASE("linear denoiser matches the joint normal equations") {
  Stream rng(3);
  const Index n_out = 7, n_in = 5, d = 3;
  const Mat w = gaussian_matrix<double>(n_out, n_in, rng);
  const Mat b = gaussian_matrix<double>(n_out, d, rng);
  const Mat np = spd(d, rng, 0.5), gm = spd(d, rng, 0.3), gp = spd(d, rng, 0.3);
  const Mat rm = gaussian_matrix<double>(n_out, d, rng), rp = gaussian_matrix<double>(n_in, d, rng);
  const DenoiserResult res = linear_denoise(LinearLayer::make(w, b, np), rm, rp, {gm, gp});
  const auto [u, x] = oracle::linear_layer_normal_equations(w, b, np, gm, gp, rm, rp);
  CHECK((res.zhat_plus - x).norm() / x.norm() <= 1e-8);
  CHECK((res.zhat_minus - u).norm() / u.norm() <= 1e-8);
}

TEST_CASE("noiseless linear denoiser lies on the constraint") {
  Stream rng(4);
  const Index n_out = 9, n_in = 6, d = 2;
  const Mat w = gaussian_matrix<double>(n_out, n_in, rng);
  const Mat b = gaussian_matrix<double>(n_out, d, rng);
  const DenoiserResult res = linear_denoise(LinearLayer::make(w, b, std::nullopt), gaussian_matrix<double>(n_out, d, rng),
                                            gaussian_matrix<double>(n_in, d, rng), {spd(d, rng, 0.5), spd(d, rng, 0.5)});
  CHECK(max_abs(res.zhat_plus - (w * res.zhat_minus + b)) <= 1e-10);
}

TEST_CASE("linear denoiser jacobian passes the finite-difference check") {
  Stream rng(5);
  const Index n_out = 8, n_in = 6, d = 2;
  const LinearLayer layer = LinearLayer::make(gaussian_matrix<double>(n_out, n_in, rng) / std::sqrt(6.0),
                                              Mat::Zero(n_out, d), spd(d, rng, 1.0));
  const PrecisionBundle prec{spd(d, rng, 0.5), spd(d, rng, 0.5)};
  const Mat rp = gaussian_matrix<double>(n_in, d, rng);
  const JacobianReport rep = jacobian_check(
      [&](const Mat& rm) {
        const DenoiserResult r = linear_denoise(layer, rm, rp, prec);
        return std::make_pair(r.zhat_plus, r.jac_plus);
      },
      gaussian_matrix<double>(n_out, d, rng));
  CHECK(rep.pass);
  CHECK(rep.max_abs_dev <= 1e-6);
}

TEST_CASE("MMSE identity layer equals the conjugate Gaussian posterior") {
  Stream rng(6);
  const Index n = 10, d = 2;
  const Mat sigma = 0.3 * spd(d, rng, 1.0), gm = spd(d, rng, 0.5), gp = spd(d, rng, 0.5);
  const Mat rm = gaussian_matrix<double>(n, d, rng), rp = gaussian_matrix<double>(n, d, rng);
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::identity(), sigma);
  const auto [u, z] = identity_posterior(sigma, gm, gp, rm, rp);
  const DenoiserResult closed = nonlinear_denoise_mmse(layer, rm, rp, {gm, gp}, QuadratureCfg{});
  CHECK(max_abs(closed.zhat_minus - u) <= 1e-10);
  CHECK(max_abs(closed.zhat_plus - z) <= 1e-10);
  QuadratureCfg quad;
  quad.exploit_linear = false;
  const DenoiserResult numeric = nonlinear_denoise_mmse(layer, rm, rp, {gm, gp}, quad);
  CHECK(max_abs(numeric.zhat_minus - u) <= 1e-6);
  CHECK(max_abs(numeric.zhat_plus - z) <= 1e-6);
  CHECK(max_abs(numeric.jac_minus - closed.jac_minus) <= 1e-6);
  CHECK(max_abs(numeric.jac_plus - closed.jac_plus) <= 1e-6);
}

TEST_CASE("MMSE jacobians of the identity case match finite differences") {
  Stream rng(7);
  const Index n = 6, d = 2;
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::identity(), 0.2 * Mat::Identity(d, d));
  const PrecisionBundle prec{spd(d, rng, 0.5), spd(d, rng, 0.5)};
  const Mat rp = gaussian_matrix<double>(n, d, rng);
  FdProbe probe;
  probe.row_separable = true;
  const JacobianReport rep = jacobian_check(
      [&](const Mat& rm) {
        const DenoiserResult r = nonlinear_denoise_mmse(layer, rm, rp, prec, QuadratureCfg{});
        return std::make_pair(r.zhat_plus, r.jac_plus);
      },
      gaussian_matrix<double>(n, d, rng), probe);
  CHECK(rep.max_abs_dev <= 1e-6);
}

TEST_CASE("a sharp input-side belief pins the MMSE input estimate") {
  Stream rng(8);
  const Index n = 5, d = 2;
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::sigmoid(), 0.1 * Mat::Identity(d, d));
  const Mat rp = gaussian_matrix<double>(n, d, rng);
  const DenoiserResult r = nonlinear_denoise_mmse(layer, gaussian_matrix<double>(n, d, rng), rp,
                                                  {Mat::Identity(d, d), Mat(1e8 * Mat::Identity(d, d))}, QuadratureCfg{});
  CHECK(max_abs(r.zhat_minus - rp) <= 1e-6);
}

TEST_CASE("scalar relu MMSE matches dense trapezoid integration") {
  // sigma = 0.5, (r-, r+, gamma-, gamma+) = (0.3, -0.2, 2, 1).
  const double s2 = 0.25, gm = 2.0, gp = 1.0, rmv = 0.3, rpv = -0.2;
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::relu(), Mat::Constant(1, 1, s2));
  const DenoiserResult r = nonlinear_denoise_mmse(layer, Mat::Constant(1, 1, rmv), Mat::Constant(1, 1, rpv),
                                                  {Mat::Constant(1, 1, gm), Mat::Constant(1, 1, gp)}, QuadratureCfg{});
  const double v = s2 + 1.0 / gm;
  auto like = [&](double u) {
    const double e = rmv - std::max(u, 0.0);
    return std::exp(-0.5 * e * e / v);
  };
  // Trapezoid over u in [-10, 10] with 1e5 points.
  double z0 = 0.0, m1 = 0.0, p1 = 0.0;
  const int points = 100000;
  const double h = 20.0 / (points - 1);
  for (int i = 0; i < points; ++i) {
    const double u = -10.0 + i * h;
    const double w = (i == 0 || i == points - 1 ? 0.5 : 1.0) * std::exp(-0.5 * gp * (u - rpv) * (u - rpv)) * like(u);
    z0 += w;
    m1 += w * u;
    p1 += w * std::max(u, 0.0);
  }
  const double kappa = s2 / v;
  CHECK(std::abs(r.zhat_minus(0, 0) - m1 / z0) <= 1e-3);
  CHECK(std::abs(r.zhat_plus(0, 0) - ((1.0 - kappa) * p1 / z0 + kappa * rmv)) <= 1e-3);
}

TEST_CASE("scalar relu closed form matches grid integration and quadrature converges to it") {
  Stream rng(9);
  const Index n = 20;
  const double s2 = 0.5, gm = 1.5, gp = 0.8;
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::relu(), Mat::Constant(1, 1, s2));
  const Mat rm = gaussian_matrix<double>(n, 1, rng), rp = gaussian_matrix<double>(n, 1, rng);
  const PrecisionBundle prec{Mat::Constant(1, 1, gm), Mat::Constant(1, 1, gp)};
  const DenoiserResult closed = nonlinear_denoise_mmse(layer, rm, rp, prec, QuadratureCfg{});
  const double v = s2 + 1.0 / gm, kappa = s2 / v;
  double avg_var = 0.0;
  for (Index i = 0; i < n; ++i) {
    auto like = [&](double u) {
      const double e = rm(i, 0) - std::max(u, 0.0);
      return std::exp(-0.5 * e * e / v);
    };
    const auto pu = oracle::grid_posterior_1d(rp(i, 0), gp, like, [](double u) { return u; });
    const auto pf = oracle::grid_posterior_1d(rp(i, 0), gp, like, [](double u) { return std::max(u, 0.0); });
    CHECK(std::abs(closed.zhat_minus(i, 0) - pu.mean(0)) <= 1e-6);
    CHECK(std::abs(closed.zhat_plus(i, 0) - ((1.0 - kappa) * pf.mean(0) + kappa * rm(i, 0))) <= 1e-6);
    avg_var += pu.cov(0, 0) / static_cast<double>(n);
  }
  CHECK(std::abs(closed.jac_minus(0, 0) - gp * avg_var) <= 1e-6);

  // Gauss-Hermite converges slowly across the kink, but it converges.
  auto quad_error = [&](int order) {
    QuadratureCfg quad;
    quad.exploit_linear = false;
    quad.order = order;
    const DenoiserResult numeric = nonlinear_denoise_mmse(layer, rm, rp, prec, quad);
    return max_abs(closed.zhat_minus - numeric.zhat_minus) + max_abs(closed.zhat_plus - numeric.zhat_plus);
  };
  const double e50 = quad_error(50), e400 = quad_error(400);
  CHECK(e400 < e50);
  CHECK(e400 <= 1e-2);
}

TEST_CASE("MMSE jacobian over the output precision is a symmetric PSD covariance") {
  Stream rng(10);
  const Index n = 30, d = 2;
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::sigmoid(), 0.1 * Mat::Identity(d, d));
  const Mat gm = spd(d, rng, 0.5);
  const DenoiserResult r = nonlinear_denoise_mmse(layer, gaussian_matrix<double>(n, d, rng), gaussian_matrix<double>(n, d, rng),
                                                  {gm, spd(d, rng, 0.5)}, QuadratureCfg{});
  const Mat c = gm.inverse() * r.jac_plus;
  CHECK(max_abs(c - c.transpose()) <= 1e-10 * std::max(1.0, max_abs(c)));
  CHECK(Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(c)).eigenvalues().minCoeff() >= 0.0);
  CHECK(r.jac_plus.allFinite());
  CHECK(r.jac_minus.allFinite());
}

TEST_CASE("MAP identity layer reaches the quadratic minimizer") {
  Stream rng(11);
  const Index n = 8, d = 2;
  const Mat sigma = 0.3 * spd(d, rng, 1.0), gm = spd(d, rng, 0.5), gp = spd(d, rng, 0.5);
  const Mat rm = gaussian_matrix<double>(n, d, rng), rp = gaussian_matrix<double>(n, d, rng);
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::identity(), sigma);
  const DenoiserResult map = nonlinear_denoise_map(layer, rm, rp, {gm, gp}, NewtonCfg{});
  const DenoiserResult mmse = nonlinear_denoise_mmse(layer, rm, rp, {gm, gp}, QuadratureCfg{});
  CHECK(max_abs(map.zhat_plus - mmse.zhat_plus) <= 1e-10);
  CHECK(max_abs(map.zhat_minus - mmse.zhat_minus) <= 1e-10);
  CHECK(max_abs(map.jac_plus - mmse.jac_plus) <= 1e-8);
  CHECK(max_abs(map.jac_minus - mmse.jac_minus) <= 1e-8);
}

TEST_CASE("MAP sigmoid rows are stationary") {
  Stream rng(12);
  const Index n = 25, d = 2;
  Mat sigma(2, 2);
  sigma << 0.2, 0.05, 0.05, 0.1;
  const Mat gm = spd(d, rng, 0.5), gp = spd(d, rng, 0.5);
  const Mat rm = gaussian_matrix<double>(n, d, rng), rp = gaussian_matrix<double>(n, d, rng);
  const Activation act = Activation::sigmoid();
  const NonlinearLayer layer = NonlinearLayer::additive(act, sigma);
  const DenoiserResult r = nonlinear_denoise_map(layer, rm, rp, {gm, gp}, NewtonCfg{});
  const Mat si = sigma.inverse();
  for (Index i = 0; i < n; ++i) {
    const RowVec z = r.zhat_plus.row(i), u = r.zhat_minus.row(i);
    const RowVec phi = act.value(u.array()).matrix();
    const RowVec dphi = act.first(u.array()).matrix();
    const RowVec gz = (z - rm.row(i)) * gm + (z - phi) * si;
    const RowVec gu = -((z - phi) * si).cwiseProduct(dphi) + (u - rp.row(i)) * gp;
    CHECK(std::max(gz.cwiseAbs().maxCoeff(), gu.cwiseAbs().maxCoeff()) <= 1e-9);
  }
}

TEST_CASE("MAP scalar relu matches enumeration of the two sign branches") {
  Stream rng(13);
  const double s2 = 0.3, gm = 1.7, gp = 0.9;
  const Index n = 40;
  const Mat rm = 1.5 * gaussian_matrix<double>(n, 1, rng), rp = 1.5 * gaussian_matrix<double>(n, 1, rng);
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::relu(), Mat::Constant(1, 1, s2));
  const DenoiserResult r =
      nonlinear_denoise_map(layer, rm, rp, {Mat::Constant(1, 1, gm), Mat::Constant(1, 1, gp)}, NewtonCfg{});
  auto objective = [&](double z, double u, double a, double b) {
    const double e = z - std::max(u, 0.0);
    return 0.5 * gm * (z - a) * (z - a) + 0.5 * e * e / s2 + 0.5 * gp * (u - b) * (u - b);
  };
  for (Index i = 0; i < n; ++i) {
    const double a = rm(i, 0), b = rp(i, 0);
    // u <= 0: phi = 0.
    const double u_neg = std::min(b, 0.0);
    const double z_neg = gm * a / (gm + 1.0 / s2);
    // u >= 0: phi = u, joint quadratic, projected onto the branch.
    Eigen::Matrix2d h;
    h << gm + 1.0 / s2, -1.0 / s2, -1.0 / s2, 1.0 / s2 + gp;
    const Eigen::Vector2d sol = h.inverse() * Eigen::Vector2d(gm * a, gp * b);
    double z_pos = sol(0), u_pos = sol(1);
    if (u_pos < 0.0) {
      u_pos = 0.0;
      z_pos = z_neg;
    }
    const bool neg = objective(z_neg, u_neg, a, b) <= objective(z_pos, u_pos, a, b);
    CHECK(std::abs(r.zhat_plus(i, 0) - (neg ? z_neg : z_pos)) <= 1e-8);
    CHECK(std::abs(r.zhat_minus(i, 0) - (neg ? u_neg : u_pos)) <= 1e-8);
  }
}

TEST_CASE("input denoiser with a Gaussian prior") {
  Stream rng(14);
  const Index n = 12, d = 3;
  const double tau = 1.7;
  const InputPrior prior = InputPrior::gaussian(Mat(tau * Mat::Identity(d, d)));
  const Mat gm = spd(d, rng, 0.5);
  const Mat r = gaussian_matrix<double>(n, d, rng);
  const EndpointResult e = input_denoise(prior, r, gm, Mode::mmse);
  const Mat expect = r * gm * (gm + Mat::Identity(d, d) / tau).inverse();
  CHECK(max_abs(e.zhat - expect) <= 1e-10);
  const EndpointResult pinned = input_denoise(prior, r, Mat(1e8 * Mat::Identity(d, d)), Mode::mmse);
  CHECK(max_abs(pinned.zhat - r) <= 1e-6);
  const EndpointResult point = input_denoise(InputPrior::point_mass(d), r, gm, Mode::mmse);
  CHECK(max_abs(point.zhat) == 0.0);
  CHECK(max_abs(point.jac) == 0.0);
  const EndpointResult map = input_denoise(prior, r, gm, Mode::map);
  CHECK(max_abs(map.zhat - expect) <= 1e-10);
}

TEST_CASE("output denoiser with an identity Gaussian output") {
  Stream rng(15);
  const Index n = 9, d = 2;
  const double s2 = 0.4;
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::identity(), Mat(s2 * Mat::Identity(d, d)));
  const Mat gp = spd(d, rng, 0.5);
  const Mat y = gaussian_matrix<double>(n, d, rng), rp = gaussian_matrix<double>(n, d, rng);
  const EndpointResult e = output_denoise(layer, y, rp, gp, Mode::mmse);
  const Mat expect = (rp * gp + y / s2) * (gp + Mat::Identity(d, d) / s2).inverse();
  CHECK(max_abs(e.zhat - expect) <= 1e-10);
  const NonlinearLayer exact = NonlinearLayer::additive(Activation::identity(), Mat(1e-12 * Mat::Identity(d, d)));
  CHECK(max_abs(output_denoise(exact, y, rp, gp, Mode::mmse).zhat - y) <= 1e-9);

  // Zero noise pins the estimate to the observation with a vanishing jacobian.
  const NonlinearLayer pinned = NonlinearLayer::additive(Activation::identity(), Mat::Zero(d, d));
  const EndpointResult p = output_denoise(pinned, y, rp, gp, Mode::mmse);
  CHECK(max_abs(p.zhat - y) <= 1e-12);
  CHECK(max_abs(p.jac) <= 1e-12);

  // Noise in one coordinate only: that coordinate is pinned, the other is conjugate.
  Mat half = Mat::Zero(d, d);
  half(1, 1) = s2;
  const EndpointResult h = output_denoise(NonlinearLayer::additive(Activation::identity(), half), y, rp, gp, Mode::mmse);
  const Mat c = gp.inverse();
  for (Index i = 0; i < n; ++i) {
    CHECK(std::abs(h.zhat(i, 0) - y(i, 0)) <= 1e-12);
    // Given u0 = y0, u1 | u0 ~ N(rp1 + c10 / c00 (y0 - rp0), c11 - c10^2 / c00), observed with noise s2.
    const double m = rp(i, 1) + c(1, 0) / c(0, 0) * (y(i, 0) - rp(i, 0));
    const double v = c(1, 1) - c(1, 0) * c(1, 0) / c(0, 0);
    CHECK(std::abs(h.zhat(i, 1) - (m / v + y(i, 1) / s2) / (1.0 / v + 1.0 / s2)) <= 1e-10);
  }
}

TEST_CASE("committee output denoiser matches order-60 Gauss-Hermite") {
  Stream rng(16);
  const Index n = 6;
  Vec f2(2);
  f2 << 0.8, 1.1;
  const double nv = 0.1;
  const NonlinearLayer layer = NonlinearLayer::committee(Activation::sigmoid(), f2, nv);
  Mat gp(2, 2);
  gp << 1.0, 0.2, 0.2, 1.4;
  const Mat rp = gaussian_matrix<double>(n, 2, rng);
  const Mat y = 0.5 * gaussian_matrix<double>(n, 1, rng);
  const EndpointResult e = output_denoise(layer, y, rp, gp, Mode::mmse);
  for (Index i = 0; i < n; ++i) {
    auto like = [&](const Vec& z) {
      const double out = f2(0) / (1.0 + std::exp(-z(0))) + f2(1) / (1.0 + std::exp(-z(1)));
      return std::exp(-0.5 * (y(i, 0) - out) * (y(i, 0) - out) / nv);
    };
    const oracle::RowPosterior p = oracle::gauss_hermite_posterior_2d(rp.row(i).transpose(), gp, like, 60);
    CHECK((e.zhat.row(i).transpose() - p.mean).cwiseAbs().maxCoeff() <= 1e-4);
  }
}

TEST_CASE("two-component mixture output denoiser matches branch enumeration") {
  Stream rng(17);
  const Index n = 15;
  const double nv = 0.05, q = 0.5;
  Mat a1 = Mat::Zero(2, 1), a2 = Mat::Zero(2, 1);
  a1(0, 0) = 1.0;
  a2(1, 0) = 1.0;
  const NonlinearLayer layer = NonlinearLayer::linear_mixture({a1, a2}, {q, 1.0 - q}, Mat::Constant(1, 1, nv));
  const Mat gp = spd(2, rng, 0.5);
  const Mat rp = gaussian_matrix<double>(n, 2, rng), y = gaussian_matrix<double>(n, 1, rng);
  const EndpointResult e = output_denoise(layer, y, rp, gp, Mode::mmse);
  const Mat cov = gp.inverse();
  for (Index i = 0; i < n; ++i) {
    RowVec mean = RowVec::Zero(2);
    double total = 0.0;
    for (const auto& [a, p] : {std::pair<Mat, double>{a1, q}, {a2, 1.0 - q}}) {
      const double s = (a.transpose() * cov * a)(0, 0) + nv;
      const double resid = y(i, 0) - (rp.row(i) * a)(0, 0);
      const double w = p * std::exp(-0.5 * resid * resid / s) / std::sqrt(s);
      mean += w * (rp.row(i) + resid / s * (cov * a).transpose());
      total += w;
    }
    CHECK(max_abs(e.zhat.row(i) - mean / total) <= 1e-10);
  }
}

TEST_CASE("mixture with equal maps reduces to the plain Gaussian denoiser") {
  Stream rng(18);
  const Index n = 7;
  Mat a = Mat::Zero(2, 1);
  a(0, 0) = 0.7;
  a(1, 0) = -0.4;
  const NonlinearLayer mix = NonlinearLayer::linear_mixture({a, a}, {0.3, 0.7}, Mat::Constant(1, 1, 0.05));
  const NonlinearLayer plain = NonlinearLayer::additive(Activation::identity(), Mat::Constant(1, 1, 0.05), a);
  const Mat gp = spd(2, rng, 0.5);
  const Mat rp = gaussian_matrix<double>(n, 2, rng), y = gaussian_matrix<double>(n, 1, rng);
  CHECK(max_abs(output_denoise(mix, y, rp, gp, Mode::mmse).zhat - output_denoise(plain, y, rp, gp, Mode::mmse).zhat) <=
        1e-10);
}

TEST_CASE("non-density layers are rejected by the MMSE denoiser") {
  const NonlinearLayer g = NonlinearLayer::general(
      1, [](Stream& s) { return RowVec::Constant(1, s.normal()); },
      [](const RowVec& u, const RowVec& xi) { return RowVec(u + xi); }, 1);
  CHECK_THROWS_AS(nonlinear_denoise_mmse(g, Mat::Zero(2, 1), Mat::Zero(2, 1),
                                         {Mat::Identity(1, 1), Mat::Identity(1, 1)}, QuadratureCfg{}),
                  Error);
}
