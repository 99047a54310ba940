#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/linalg.hpp"
#include "newton.hpp"
#include "nonlinear_core.hpp"

#include <cmath>
#include <limits>

namespace mlmv {

namespace {

void check_input_shapes(const InputPrior& prior, const Mat& r, const Mat& gamma) {
  if (r.cols() != prior.d || gamma.rows() != prior.d || gamma.cols() != prior.d)
    throw Error(ErrorKind::invalid_dimension, "input denoiser: message and prior dimensions differ");
}

EndpointResult mixture_mmse(const InputPrior& prior, const Mat& r, const Mat& gamma) {
  const Index n = r.rows();
  const Index d = prior.d;
  const Mat noise_cov = spd_inverse(gamma);
  struct Component {
    double log_weight;
    RowVec mean;
    Mat gain;   // (C + Gamma^{-1})^{-1} C
    Mat post_cov;
    Mat evid_inv;
    double half_logdet;
  };
  std::vector<Component> comps;
  for (std::size_t c = 0; c < prior.weights.size(); ++c) {
    if (prior.weights[c] <= 0.0) continue;
    Component comp;
    comp.log_weight = std::log(prior.weights[c]);
    comp.mean = prior.means[c];
    const Mat evid = symmetrize(Mat(prior.covs[c] + noise_cov));
    Eigen::LLT<Mat> llt(evid);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::numerical, "input denoiser: evidence covariance");
    comp.evid_inv = llt.solve(Mat::Identity(d, d));
    comp.gain = comp.evid_inv * prior.covs[c];
    comp.post_cov = symmetrize(Mat(prior.covs[c] - prior.covs[c] * comp.gain));
    comp.half_logdet = Mat(llt.matrixL()).diagonal().array().log().sum();
    comps.push_back(std::move(comp));
  }
  EndpointResult out;
  out.zhat.resize(n, d);
  Mat cov_sum = Mat::Zero(d, d);
  std::vector<double> w(comps.size());
  std::vector<RowVec> m(comps.size());
  for (Index i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < comps.size(); ++c) {
      const RowVec delta = r.row(i) - comps[c].mean;
      w[c] = comps[c].log_weight - comps[c].half_logdet - 0.5 * (delta * comps[c].evid_inv).dot(delta);
      top = std::max(top, w[c]);
      m[c] = comps[c].mean + delta * comps[c].gain;
    }
    double total = 0.0;
    for (double& x : w) total += (x = std::exp(x - top));
    RowVec mean = RowVec::Zero(d);
    for (std::size_t c = 0; c < comps.size(); ++c) mean += (w[c] /= total) * m[c];
    for (std::size_t c = 0; c < comps.size(); ++c) {
      const RowVec dm = m[c] - mean;
      cov_sum += w[c] * (comps[c].post_cov + dm.transpose() * dm);
    }
    out.zhat.row(i) = mean;
  }
  out.jac = gamma * cov_sum / static_cast<double>(n);
  return out;
}

EndpointResult mixture_map(const InputPrior& prior, const Mat& r, const Mat& gamma, const NewtonCfg& opt) {
  const Index n = r.rows();
  const Index d = prior.d;
  std::vector<Mat> prec;
  std::vector<RowVec> means;
  std::vector<double> base;
  for (std::size_t c = 0; c < prior.weights.size(); ++c) {
    if (prior.weights[c] <= 0.0) continue;
    Eigen::LLT<Mat> llt(prior.covs[c]);
    if (llt.info() != Eigen::Success || !(Mat(llt.matrixL()).diagonal().minCoeff() > 0.0))
      throw Error(ErrorKind::no_density, "MAP input denoiser: prior component '" + prior.label +
                                             "' has a singular covariance and no density");
    prec.push_back(llt.solve(Mat::Identity(d, d)));
    means.push_back(prior.means[c]);
    base.push_back(-std::log(prior.weights[c]) + Mat(llt.matrixL()).diagonal().array().log().sum());
  }
  EndpointResult out;
  out.zhat.resize(n, d);
  Mat jac_sum = Mat::Zero(d, d);
  for (Index i = 0; i < n; ++i) {
    const RowVec ri = r.row(i);
    detail::QuadraticMixture q;
    for (std::size_t c = 0; c < prec.size(); ++c) {
      q.h.push_back(symmetrize(Mat(prec[c] + gamma)));
      q.l.push_back(-(means[c] * prec[c] + ri * gamma));
      q.c.push_back(base[c] + 0.5 * (means[c] * prec[c]).dot(means[c]) + 0.5 * (ri * gamma).dot(ri));
    }
    const detail::Objective f = [&](const Vec& x, Vec* g, Mat* h) { return q.eval(x.transpose(), g, h); };
    detail::NewtonOutcome best;
    best.value = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < prec.size(); ++c) {
      detail::NewtonOutcome res = detail::newton_minimize(f, -q.h[c].llt().solve(q.l[c].transpose()), opt);
      if (res.converged && res.value < best.value) best = std::move(res);
    }
    if (!std::isfinite(best.value))
      throw Error(ErrorKind::map_no_convergence, "MAP input denoiser did not converge at row " + std::to_string(i));
    out.zhat.row(i) = best.x.transpose();
    jac_sum += gamma * best.hessian.ldlt().solve(Mat::Identity(d, d));
  }
  out.jac = jac_sum / static_cast<double>(n);
  return out;
}

// argmin_u (1/2)(u - r) G (u - r)^T + lambda ||u||, row by row.
EndpointResult group_lasso_prox(const InputPrior& prior, const Mat& r, const Mat& gamma) {
  const Index n = r.rows();
  const Index d = prior.d;
  const double lambda = prior.lambda;
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(gamma));
  const Vec g = eig.eigenvalues();
  const Mat basis = eig.eigenvectors();
  EndpointResult out;
  out.zhat = Mat::Zero(n, d);
  Mat jac_sum = Mat::Zero(d, d);
  for (Index i = 0; i < n; ++i) {
    const Vec pull = gamma * r.row(i).transpose();
    if (pull.norm() <= lambda) continue;
    const Vec rho = basis.transpose() * r.row(i).transpose();
    auto norm_at = [&](double t) { return (g.array() * rho.array() / (g.array() + lambda / t)).matrix().norm(); };
    double lo = 0.0;
    double hi = rho.norm();
    for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (norm_at(mid) > mid ? lo : hi) = mid;
    }
    const double t = 0.5 * (lo + hi);
    const Vec u = basis * (g.array() * rho.array() / (g.array() + lambda / t)).matrix();
    out.zhat.row(i) = u.transpose();
    const double un = u.norm();
    const Mat hess = gamma + lambda * (Mat::Identity(d, d) / un - u * u.transpose() / (un * un * un));
    jac_sum += gamma * hess.ldlt().solve(Mat::Identity(d, d));
  }
  out.jac = jac_sum / static_cast<double>(n);
  return out;
}

}  // namespace

EndpointResult input_denoise(const InputPrior& prior, const Mat& r_minus, const Mat& gamma_minus, Mode mode,
                             const NewtonCfg& opt) {
  check_input_shapes(prior, r_minus, gamma_minus);
  if (prior.kind == InputPrior::Kind::group_lasso) {
    if (mode == Mode::mmse)
      throw Error(ErrorKind::no_density, "group_lasso is a penalty without a normalised prior; use MAP mode");
    return group_lasso_prox(prior, r_minus, gamma_minus);
  }
  return mode == Mode::mmse ? mixture_mmse(prior, r_minus, gamma_minus) : mixture_map(prior, r_minus, gamma_minus, opt);
}

EndpointResult output_denoise(const NonlinearLayer& layer, const Mat& y, const Mat& r_plus, const Mat& gamma_plus,
                              Mode mode, const QuadratureCfg& quad, const NewtonCfg& opt) {
  if (y.rows() != r_plus.rows()) throw Error(ErrorKind::invalid_dimension, "output denoiser: row counts differ");
  if (y.cols() != layer.out_dim(r_plus.cols()))
    throw Error(ErrorKind::invalid_dimension, "output denoiser: observation width");
  detail::LayerEstimate est =
      mode == Mode::mmse ? detail::nonlinear_mmse_core(layer, y, nullptr, r_plus, gamma_plus, false, quad)
                         : detail::nonlinear_map_core(layer, y, nullptr, r_plus, gamma_plus, false, opt, quad.threads);
  return {std::move(est.u_mean), std::move(est.jac_minus)};
}

}  // namespace mlmv
