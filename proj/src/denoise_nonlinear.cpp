#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/parallel.hpp"
#include "nonlinear_core.hpp"

#include <cmath>
#include <limits>

namespace mlmv {

namespace detail {

using RowMoments = LayerEstimate;

namespace {

Mat readout_or_identity(const NonlinearLayer& layer, Index d) {
  return layer.readout ? *layer.readout : Mat::Identity(d, d);
}

// Quantities shared by every row: effective likelihood precision on the output
// side and the conditional law of z given u.
struct LikelihoodGeometry {
  Mat prec;       // (Sigma + Gamma-^{-1})^{-1}, or Sigma^{-1} when pinned
  Mat gain;       // prec * Sigma: E[z | u] = phi + (r- - phi) * gain
  Mat cond_cov;   // Sigma - Sigma prec Sigma
};

LikelihoodGeometry likelihood_geometry(const Mat& sigma, const Mat* gamma_minus) {
  LikelihoodGeometry g;
  const Index k = sigma.rows();
  Mat s_eff = sigma;
  if (gamma_minus) s_eff += spd_inverse(*gamma_minus);
  Eigen::LDLT<Mat> ldlt(symmetrize(s_eff));
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
    throw Error(ErrorKind::no_density, "observation noise covariance is singular; the output likelihood has no density");
  g.prec = symmetrize(Mat(ldlt.solve(Mat::Identity(k, k))));
  g.gain = g.prec * sigma;
  g.cond_cov = symmetrize(Mat(sigma - sigma * g.prec * sigma));
  return g;
}

RowMoments linear_gaussian_closed_form(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                                       const Mat& r_plus, const Mat& gamma_plus, bool want_z) {
  const Index d = r_plus.cols();
  const Mat a = readout_or_identity(layer, d);
  if (!gamma_minus) {
    // Output endpoint in covariance form, valid for singular (including zero) noise:
    // u | y ~ N(r+ + (y - r+ A) S^{-1} A^T C, C - C A S^{-1} A^T C), C = Gamma+^{-1}, S = A^T C A + Sigma.
    const Mat c = spd_inverse(gamma_plus);
    const Mat s = symmetrize(Mat(a.transpose() * c * a + layer.noise_cov));
    Eigen::LDLT<Mat> ldlt(s);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
      throw Error(ErrorKind::no_density, "observation covariance A^T Gamma+^{-1} A + Sigma is singular");
    const Mat gain = ldlt.solve(Mat(a.transpose() * c));  // S^{-1} A^T C
    RowMoments out;
    out.u_mean = r_plus + (target - r_plus * a) * gain;
    out.jac_minus = gamma_plus * symmetrize(Mat(c - c * a * gain));
    return out;
  }
  const LikelihoodGeometry g = likelihood_geometry(layer.noise_cov, gamma_minus);
  const Mat pi = symmetrize(Mat(gamma_plus + a * g.prec * a.transpose()));
  const Mat pi_inv = spd_inverse(pi);
  RowMoments out;
  out.u_mean = (r_plus * gamma_plus + target * g.prec * a.transpose()) * pi_inv;
  out.jac_minus = gamma_plus * pi_inv;
  if (want_z) {
    const Index k = a.cols();
    const Mat keep = Mat::Identity(k, k) - g.gain;
    out.z_mean = out.u_mean * a * keep + target * g.gain;
    const Mat cov_z = g.cond_cov + keep.transpose() * a.transpose() * pi_inv * a * keep;
    out.jac_plus = *gamma_minus * cov_z;
  }
  return out;
}

// log Phi(x) for the standard normal cdf, with the Mills-ratio expansion far in the lower tail.
double log_normal_cdf(double x) {
  if (x > -35.0) return std::log(0.5 * std::erfc(-x / std::sqrt(2.0)));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * M_PI) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

// phi(x) / Phi(x).
double inverse_mills(double x) { return std::exp(-0.5 * x * x - 0.5 * std::log(2.0 * M_PI) - log_normal_cdf(x)); }

// Scalar relu input (d = 1): the posterior of u is a two-piece mixture of
// truncated Gaussians, flat likelihood on u < 0 and Gaussian on u > 0.
RowMoments relu_scalar_closed_form(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                                   const Mat& r_plus, const Mat& gamma_plus, bool want_z) {
  const Index n = r_plus.rows();
  const Mat a = readout_or_identity(layer, 1);
  const Index k = a.cols();
  const LikelihoodGeometry g = likelihood_geometry(layer.noise_cov, gamma_minus);
  const Mat keep = Mat::Identity(k, k) - g.gain;
  const double gp = gamma_plus(0, 0);
  const double alpha = (a * g.prec * a.transpose())(0, 0);
  const double s_left = 1.0 / std::sqrt(gp);
  const double s_right = 1.0 / std::sqrt(gp + alpha);
  const RowVec lift = a * keep;  // z mean is phi(u) * lift + r- * gain

  RowMoments out;
  out.u_mean.resize(n, 1);
  if (want_z) out.z_mean.resize(n, k);
  double var_u_sum = 0.0;
  Mat cov_z_sum = Mat::Zero(k, k);
  for (Index i = 0; i < n; ++i) {
    const double m = r_plus(i, 0);
    const double beta = (target.row(i) * g.prec * a.transpose())(0, 0);
    const double m_right = (gp * m + beta) / (gp + alpha);
    const double b_left = -m / s_left;
    const double b_right = -m_right / s_right;
    const double log_left = log_normal_cdf(b_left);
    const double log_right = 0.5 * std::log(gp / (gp + alpha)) -
                             0.5 * (gp * m * m - (gp + alpha) * m_right * m_right) + log_normal_cdf(-b_right);
    const double top = std::max(log_left, log_right);
    const double w_left = std::exp(log_left - top);
    const double w_right = std::exp(log_right - top);
    const double p_right = w_right / (w_left + w_right);
    const double p_left = 1.0 - p_right;

    const double lam_left = inverse_mills(b_left);
    const double e_left = m - s_left * lam_left;
    const double v_left = std::max(0.0, s_left * s_left * (1.0 - b_left * lam_left - lam_left * lam_left));
    const double lam_right = inverse_mills(-b_right);
    const double e_right = m_right + s_right * lam_right;
    const double v_right = std::max(0.0, s_right * s_right * (1.0 + b_right * lam_right - lam_right * lam_right));

    const double mean_u = p_left * e_left + p_right * e_right;
    const double var_u = p_left * (v_left + e_left * e_left) + p_right * (v_right + e_right * e_right) - mean_u * mean_u;
    out.u_mean(i, 0) = mean_u;
    var_u_sum += std::max(0.0, var_u);
    if (want_z) {
      const double mean_phi = p_right * e_right;
      const double var_phi = std::max(0.0, p_right * (v_right + e_right * e_right) - mean_phi * mean_phi);
      out.z_mean.row(i) = mean_phi * lift + target.row(i) * g.gain;
      cov_z_sum += var_phi * lift.transpose() * lift;
    }
  }
  out.jac_minus = Mat::Constant(1, 1, gp * var_u_sum / static_cast<double>(n));
  if (want_z) out.jac_plus = *gamma_minus * (g.cond_cov + cov_z_sum / static_cast<double>(n));
  return out;
}

RowMoments mixture_closed_form(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                               const Mat& r_plus, const Mat& gamma_plus, bool want_z) {
  const Index n = r_plus.rows();
  const Index d = r_plus.cols();
  const Index k = layer.maps[0].cols();
  const LikelihoodGeometry g = likelihood_geometry(layer.noise_cov, gamma_minus);
  const Mat prior_cov = spd_inverse(gamma_plus);
  const Mat s_eff = spd_inverse(g.prec);
  const Mat keep = Mat::Identity(k, k) - g.gain;

  struct Component {
    double log_weight;
    Mat pi_inv;
    Mat v_inv;
    double half_logdet_v;
    Mat cov_z;
  };
  std::vector<Component> comps;
  std::vector<std::size_t> ids;
  for (std::size_t c = 0; c < layer.maps.size(); ++c) {
    if (layer.probs[c] <= 0.0) continue;
    const Mat& a = layer.maps[c];
    Component comp;
    comp.log_weight = std::log(layer.probs[c]);
    comp.pi_inv = spd_inverse(Mat(gamma_plus + a * g.prec * a.transpose()));
    const Mat v = symmetrize(Mat(s_eff + a.transpose() * prior_cov * a));
    Eigen::LLT<Mat> llt(v);
    comp.v_inv = llt.solve(Mat::Identity(k, k));
    comp.half_logdet_v = Mat(llt.matrixL()).diagonal().array().log().sum();
    comp.cov_z = g.cond_cov + keep.transpose() * a.transpose() * comp.pi_inv * a * keep;
    comps.push_back(std::move(comp));
    ids.push_back(c);
  }

  RowMoments out;
  out.u_mean.resize(n, d);
  if (want_z) out.z_mean.resize(n, k);
  Mat cov_u_sum = Mat::Zero(d, d);
  Mat cov_z_sum = Mat::Zero(k, k);
  std::vector<double> logw(comps.size());
  std::vector<RowVec> mu(comps.size()), mz(comps.size());
  for (Index i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < comps.size(); ++j) {
      const Mat& a = layer.maps[ids[j]];
      const RowVec delta = target.row(i) - r_plus.row(i) * a;
      logw[j] = comps[j].log_weight - comps[j].half_logdet_v - 0.5 * (delta * comps[j].v_inv).dot(delta);
      best = std::max(best, logw[j]);
      mu[j] = (r_plus.row(i) * gamma_plus + target.row(i) * g.prec * a.transpose()) * comps[j].pi_inv;
      if (want_z) mz[j] = mu[j] * a * keep + target.row(i) * g.gain;
    }
    double total = 0.0;
    for (double& w : logw) {
      w = std::exp(w - best);
      total += w;
    }
    RowVec mean_u = RowVec::Zero(d);
    RowVec mean_z = RowVec::Zero(k);
    for (std::size_t j = 0; j < comps.size(); ++j) {
      logw[j] /= total;
      mean_u += logw[j] * mu[j];
      if (want_z) mean_z += logw[j] * mz[j];
    }
    for (std::size_t j = 0; j < comps.size(); ++j) {
      const RowVec du = mu[j] - mean_u;
      cov_u_sum += logw[j] * (comps[j].pi_inv + du.transpose() * du);
      if (want_z) {
        const RowVec dz = mz[j] - mean_z;
        cov_z_sum += logw[j] * (comps[j].cov_z + dz.transpose() * dz);
      }
    }
    out.u_mean.row(i) = mean_u;
    if (want_z) out.z_mean.row(i) = mean_z;
  }
  out.jac_minus = gamma_plus * cov_u_sum / static_cast<double>(n);
  if (want_z) out.jac_plus = *gamma_minus * cov_z_sum / static_cast<double>(n);
  return out;
}

// Integration over u with nodes centred and scaled on the Gaussian factor
// N(r+, Gamma+^{-1}). The input-side jacobian differentiates the node-shifted rule
// exactly; the output-side one uses the covariance identity, which is exact for
// fixed nodes.
RowMoments additive_quadrature(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                               const Mat& r_plus, const Mat& gamma_plus, bool want_z, const QuadratureCfg& cfg) {
  const Index n = r_plus.rows();
  const Index d = r_plus.cols();
  const Mat a = readout_or_identity(layer, d);
  const Index k = a.cols();
  const LikelihoodGeometry g = likelihood_geometry(layer.noise_cov, gamma_minus);
  const auto nodes = standard_nodes(d, cfg);
  const Eigen::LLT<Mat> llt(spd_inverse(gamma_plus));
  const Mat lower = llt.matrixL();
  const Mat offsets = nodes->points * lower.transpose();
  const Arr log_node_w = nodes->weights.array().log();
  const Mat prec_at = g.prec * a.transpose();  // k x d

  RowMoments out;
  out.u_mean.resize(n, d);
  if (want_z) out.z_mean.resize(n, k);
  Mat jm_rows(n, d * d);
  Mat jp_rows(want_z ? n : 0, k * k);

  parallel_for(n, cfg.threads, [&](Index begin, Index end) {
    Arr act_v, act_d;
    for (Index i = begin; i < end; ++i) {
      Mat u = offsets;
      u.rowwise() += r_plus.row(i);
      layer.act.eval(u.array(), act_v, act_d);
      const Mat phi = act_v.matrix() * a;
      Mat e = -phi;
      e.rowwise() += target.row(i);
      const Mat ep = e * g.prec;
      const Arr logw = log_node_w - 0.5 * (ep.array() * e.array()).rowwise().sum();
      const double top = logw.maxCoeff();
      if (!std::isfinite(top))
        throw Error(ErrorKind::degenerate_belief, "quadrature weights vanish at row " + std::to_string(i));
      Vec w = (logw - top).exp().matrix();
      w /= w.sum();

      const RowVec mu = w.transpose() * u;
      const Mat uc = u.rowwise() - mu;
      const Mat grad = ((e * prec_at).array() * act_d).matrix();
      const RowVec gbar = w.transpose() * grad;
      Mat jm = (grad.rowwise() - gbar).transpose() * (uc.array().colwise() * w.array()).matrix();
      jm.diagonal().array() += 1.0;
      out.u_mean.row(i) = mu;
      jm_rows.row(i) = Eigen::Map<const RowVec>(jm.data(), d * d);

      if (want_z) {
        const Mat mz = phi + e * g.gain;
        const RowVec zbar = w.transpose() * mz;
        const Mat zc = mz.rowwise() - zbar;
        const Mat cov_z = g.cond_cov + zc.transpose() * (zc.array().colwise() * w.array()).matrix();
        const Mat jp = *gamma_minus * cov_z;
        out.z_mean.row(i) = zbar;
        jp_rows.row(i) = Eigen::Map<const RowVec>(jp.data(), k * k);
      }
    }
  });
  const RowVec jm_mean = jm_rows.colwise().mean();
  out.jac_minus = Eigen::Map<const Mat>(jm_mean.data(), d, d);
  if (want_z) {
    const RowVec jp_mean = jp_rows.colwise().mean();
    out.jac_plus = Eigen::Map<const Mat>(jp_mean.data(), k, k);
  }
  return out;
}

}  // namespace

LayerEstimate nonlinear_mmse_core(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                                      const Mat& r_plus, const Mat& gamma_plus, bool want_z, const QuadratureCfg& cfg) {
  if (target.rows() != r_plus.rows())
    throw Error(ErrorKind::invalid_dimension, "nonlinear denoiser: message row counts differ");
  if (gamma_plus.rows() != r_plus.cols() || gamma_plus.cols() != r_plus.cols())
    throw Error(ErrorKind::invalid_dimension, "nonlinear denoiser: gamma_plus shape");
  RowMoments m;
  switch (layer.kind) {
    case NoiseKind::general:
      throw Error(ErrorKind::no_density, "general nonlinear layers can be sampled but not denoised");
    case NoiseKind::linear_mixture:
      m = mixture_closed_form(layer, target, gamma_minus, r_plus, gamma_plus, want_z);
      break;
    case NoiseKind::additive_gaussian:
      if (layer.act.is_linear() && cfg.exploit_linear)
        m = linear_gaussian_closed_form(layer, target, gamma_minus, r_plus, gamma_plus, want_z);
      else if (layer.act.kind() == ActivationKind::relu && r_plus.cols() == 1 && cfg.exploit_linear)
        m = relu_scalar_closed_form(layer, target, gamma_minus, r_plus, gamma_plus, want_z);
      else
        m = additive_quadrature(layer, target, gamma_minus, r_plus, gamma_plus, want_z, cfg);
      break;
  }
  return m;
}

}  // namespace detail

DenoiserResult nonlinear_denoise_mmse(const NonlinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                                      const PrecisionBundle& prec, const QuadratureCfg& quad) {
  const Index k = layer.out_dim(r_plus_prev.cols());
  if (r_minus.cols() != k || prec.gamma_minus.rows() != k)
    throw Error(ErrorKind::invalid_dimension, "nonlinear_denoise_mmse: output-side shapes");
  auto m = detail::nonlinear_mmse_core(layer, r_minus, &prec.gamma_minus, r_plus_prev, prec.gamma_plus_prev, true, quad);
  return {std::move(m.z_mean), std::move(m.u_mean), std::move(m.jac_plus), std::move(m.jac_minus)};
}

DenoiserResult nonlinear_denoise(const NonlinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                                 const PrecisionBundle& prec, const DenoiserSuite& suite, bool want_plus) {
  const Index k = layer.out_dim(r_plus_prev.cols());
  if (r_minus.cols() != k || prec.gamma_minus.rows() != k)
    throw Error(ErrorKind::invalid_dimension, "nonlinear_denoise: output-side shapes");
  QuadratureCfg quad = suite.quad;
  quad.threads = suite.threads;
  auto m = suite.mode == Mode::map
               ? detail::nonlinear_map_core(layer, r_minus, &prec.gamma_minus, r_plus_prev, prec.gamma_plus_prev,
                                            want_plus, suite.newton, suite.threads)
               : detail::nonlinear_mmse_core(layer, r_minus, &prec.gamma_minus, r_plus_prev, prec.gamma_plus_prev,
                                             want_plus, quad);
  return {std::move(m.z_mean), std::move(m.u_mean), std::move(m.jac_plus), std::move(m.jac_minus)};
}

}  // namespace mlmv
