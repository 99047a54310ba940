#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/io.hpp"
#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/parallel.hpp"
#include "newton.hpp"
#include "nonlinear_core.hpp"

#include <cmath>
#include <limits>

namespace mlmv::detail {

namespace {

Mat readout_or_identity(const NonlinearLayer& layer, Index d) {
  return layer.readout ? *layer.readout : Mat::Identity(d, d);
}

Mat noise_precision(const Mat& sigma) {
  Eigen::LDLT<Mat> ldlt(symmetrize(sigma));
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
    throw Error(ErrorKind::no_density, "MAP denoising needs a nonsingular observation noise covariance");
  return symmetrize(Mat(ldlt.solve(Mat::Identity(sigma.rows(), sigma.cols()))));
}

// Shared per-layer constants for the additive model z = act(u) A + xi.
struct AdditiveSetup {
  Mat a;           // d x k
  Mat sigma_inv;   // k x k
  Mat profile;     // precision of (target - phi) after z is eliminated
  Mat gain;        // profile * Sigma
  const Mat* gamma_minus;
  const Mat* gamma_plus;
  bool pinned;
};

// Joint Hessian in (z, u) (or u alone when pinned) given the activation slopes
// and curvatures at u. Coordinates with free[i] false are held at zero.
Mat joint_hessian(const AdditiveSetup& s, const RowVec& d1, const RowVec& d2, const RowVec& z, const RowVec& phi,
                  const std::vector<bool>& free) {
  const Index d = d1.size();
  const Index k = s.a.cols();
  std::vector<Index> idx;
  for (Index i = 0; i < d; ++i)
    if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
  const Index m = static_cast<Index>(idx.size());
  const Mat slope = d1.transpose().asDiagonal() * s.a;  // d x k
  Mat h_uu(d, d);
  if (s.pinned) {
    const RowVec v = (z - phi) * s.sigma_inv;
    h_uu = *s.gamma_plus + slope * s.sigma_inv * slope.transpose();
    h_uu.diagonal() -= (d2.array() * (v * s.a.transpose()).array()).matrix().transpose();
    Mat out(m, m);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j) out(i, j) = h_uu(idx[i], idx[j]);
    return out;
  }
  const RowVec v = (z - phi) * s.sigma_inv;
  h_uu = *s.gamma_plus + slope * s.sigma_inv * slope.transpose();
  h_uu.diagonal() -= (d2.array() * (v * s.a.transpose()).array()).matrix().transpose();
  const Mat h_zu = -s.sigma_inv * slope.transpose();  // k x d
  Mat out(k + m, k + m);
  out.topLeftCorner(k, k) = *s.gamma_minus + s.sigma_inv;
  for (Index j = 0; j < m; ++j) out.block(0, k + j, k, 1) = h_zu.col(idx[j]);
  out.bottomLeftCorner(m, k) = out.topRightCorner(k, m).transpose();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j) out(k + i, k + j) = h_uu(idx[i], idx[j]);
  return out;
}

struct RowMode {
  RowVec z;
  RowVec u;
  Mat jac_plus;   // k x k
  Mat jac_minus;  // d x d
};

RowMode finish_row(const AdditiveSetup& s, const Activation& act, const RowVec& target, const RowVec& u,
                   const std::vector<bool>& free) {
  const Index d = u.size();
  const Index k = s.a.cols();
  Arr ua = u.array();
  Arr v1, d1;
  act.eval(ua, v1, d1);
  Arr d2 = act.second(ua);
  for (Index i = 0; i < d; ++i)
    if (!free[static_cast<std::size_t>(i)]) d1(0, i) = d2(0, i) = 0.0;
  const RowVec phi = v1.matrix() * s.a;
  RowMode out;
  out.u = u;
  out.z = s.pinned ? target : RowVec(phi + (target - phi) * s.gain);
  const Mat h = joint_hessian(s, d1.matrix(), d2.matrix(), out.z, phi, free);
  Eigen::LDLT<Mat> ldlt(h);
  const Mat hinv = ldlt.solve(Mat::Identity(h.rows(), h.cols()));
  if (!hinv.allFinite()) throw Error(ErrorKind::numerical, "MAP denoiser: singular Hessian at the mode");
  const Index off = s.pinned ? 0 : k;
  Mat cov_u = Mat::Zero(d, d);
  Index fi = 0;
  std::vector<Index> idx;
  for (Index i = 0; i < d; ++i)
    if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
  for (Index i = 0; i < static_cast<Index>(idx.size()); ++i, ++fi)
    for (Index j = 0; j < static_cast<Index>(idx.size()); ++j) cov_u(idx[i], idx[j]) = hinv(off + i, off + j);
  out.jac_minus = *s.gamma_plus * cov_u;
  if (!s.pinned) out.jac_plus = *s.gamma_minus * hinv.topLeftCorner(k, k);
  return out;
}

// Profile objective after z is eliminated: (1/2)(u-r)G(u-r)^T + (1/2)(t-phi)P(t-phi)^T.
double profile_value(const AdditiveSetup& s, const Activation& act, const RowVec& target, const RowVec& r_plus,
                     const RowVec& u) {
  const RowVec du = u - r_plus;
  const RowVec e = target - RowVec(act.value(Arr(u.array())).matrix() * s.a);
  return 0.5 * (du * *s.gamma_plus).dot(du) + 0.5 * (e * s.profile).dot(e);
}

// Exact minimiser for relu and identity: on each face of the sign pattern the
// profile is a convex quadratic; the global minimum is the best feasible face
// stationary point.
RowMode piecewise_row(const AdditiveSetup& s, const Activation& act, const RowVec& target, const RowVec& r_plus) {
  const Index d = r_plus.size();
  const bool identity = act.is_linear();
  Index patterns = 1;
  if (!identity)
    for (Index i = 0; i < d; ++i) patterns *= 3;
  double best = std::numeric_limits<double>::infinity();
  RowVec best_u;
  std::vector<bool> best_free;
  std::vector<int> state(static_cast<std::size_t>(d));
  for (Index p = 0; p < patterns; ++p) {
    Index code = p;
    for (Index i = 0; i < d; ++i) {
      state[static_cast<std::size_t>(i)] = identity ? 2 : static_cast<int>(code % 3);  // 0 neg, 1 zero, 2 pos
      code /= 3;
    }
    std::vector<Index> idx;
    RowVec slope = RowVec::Zero(d);
    for (Index i = 0; i < d; ++i) {
      if (state[static_cast<std::size_t>(i)] != 1) idx.push_back(i);
      if (state[static_cast<std::size_t>(i)] == 2) slope(i) = 1.0;
    }
    const Index m = static_cast<Index>(idx.size());
    RowVec u = RowVec::Zero(d);
    if (m > 0) {
      // phi(u) = (u * slope) A on this face
      const Mat sa = slope.transpose().asDiagonal() * s.a;
      const Mat h_full = *s.gamma_plus + sa * s.profile * sa.transpose();
      const RowVec g_full = r_plus * *s.gamma_plus + target * s.profile * sa.transpose();
      Mat h(m, m);
      Vec g(m);
      for (Index i = 0; i < m; ++i) {
        g(i) = g_full(idx[i]);
        for (Index j = 0; j < m; ++j) h(i, j) = h_full(idx[i], idx[j]);
      }
      const Vec sol = h.llt().solve(g);
      for (Index i = 0; i < m; ++i) u(idx[i]) = sol(i);
    }
    bool feasible = true;
    if (!identity)
      for (Index i = 0; i < d && feasible; ++i) {
        const int st = state[static_cast<std::size_t>(i)];
        if ((st == 0 && u(i) > 0.0) || (st == 2 && u(i) < 0.0)) feasible = false;
      }
    if (!feasible) continue;
    const double val = profile_value(s, act, target, r_plus, u);
    if (val < best) {
      best = val;
      best_u = u;
      best_free.assign(static_cast<std::size_t>(d), true);
      for (Index i = 0; i < d; ++i) best_free[static_cast<std::size_t>(i)] = state[static_cast<std::size_t>(i)] != 1;
    }
  }
  if (!std::isfinite(best)) throw Error(ErrorKind::numerical, "MAP denoiser: no feasible activation pattern");
  return finish_row(s, act, target, best_u, best_free);
}

RowMode smooth_row(const AdditiveSetup& s, const Activation& act, const RowVec& target, const RowVec& r_plus,
                   const NewtonCfg& cfg, Index row) {
  const Index d = r_plus.size();
  const Objective f = [&](const Vec& x, Vec* grad, Mat* hess) {
    const RowVec u = x.transpose();
    Arr v1, d1;
    act.eval(Arr(u.array()), v1, d1);
    const RowVec e = target - RowVec(v1.matrix() * s.a);
    const RowVec du = u - r_plus;
    const RowVec ep = e * s.profile;
    if (grad || hess) {
      const RowVec back = ep * s.a.transpose();
      if (grad) *grad = (du * *s.gamma_plus - RowVec(back.array() * d1)).transpose();
      if (hess) {
        const Mat slope = d1.matrix().transpose().asDiagonal() * s.a;
        *hess = *s.gamma_plus + slope * s.profile * slope.transpose();
        const Arr d2 = act.second(Arr(u.array()));
        hess->diagonal() -= (back.array() * d2).matrix().transpose();
      }
    }
    return 0.5 * (du * *s.gamma_plus).dot(du) + 0.5 * ep.dot(e);
  };
  const NewtonOutcome res = newton_minimize(f, r_plus.transpose(), cfg);
  if (!res.converged)
    throw Error(ErrorKind::map_no_convergence, "MAP Newton did not converge at row " + std::to_string(row) +
                                                   " (gradient " + format_double(res.grad_norm) + " after " +
                                                   std::to_string(res.iterations) + " steps)");
  return finish_row(s, act, target, res.x.transpose(), std::vector<bool>(static_cast<std::size_t>(d), true));
}

LayerEstimate additive_map(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus, const Mat& r_plus,
                           const Mat& gamma_plus, bool want_z, const NewtonCfg& cfg, int threads) {
  const Index n = r_plus.rows();
  const Index d = r_plus.cols();
  AdditiveSetup s;
  s.a = readout_or_identity(layer, d);
  s.sigma_inv = noise_precision(layer.noise_cov);
  s.pinned = gamma_minus == nullptr;
  s.gamma_minus = gamma_minus;
  s.gamma_plus = &gamma_plus;
  if (s.pinned) {
    s.profile = s.sigma_inv;
  } else {
    s.profile = spd_inverse(Mat(layer.noise_cov + spd_inverse(*gamma_minus)));
  }
  s.gain = s.profile * layer.noise_cov;
  const Index k = s.a.cols();

  Activation act = layer.act;
  if (act.kind() == ActivationKind::relu && cfg.kink_smooth > 0.0) act = Activation::softplus(cfg.kink_smooth);
  const bool piecewise = act.is_piecewise_linear();

  LayerEstimate out;
  out.u_mean.resize(n, d);
  if (want_z) out.z_mean.resize(n, k);
  Mat jm_rows(n, d * d);
  Mat jp_rows(want_z ? n : 0, k * k);
  parallel_for(n, threads, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      const RowVec t = target.row(i);
      const RowVec r = r_plus.row(i);
      const RowMode m = piecewise ? piecewise_row(s, act, t, r) : smooth_row(s, act, t, r, cfg, i);
      out.u_mean.row(i) = m.u;
      jm_rows.row(i) = Eigen::Map<const RowVec>(m.jac_minus.data(), d * d);
      if (want_z) {
        out.z_mean.row(i) = m.z;
        jp_rows.row(i) = Eigen::Map<const RowVec>(m.jac_plus.data(), k * k);
      }
    }
  });
  const RowVec jm = jm_rows.colwise().mean();
  out.jac_minus = Eigen::Map<const Mat>(jm.data(), d, d);
  if (want_z) {
    const RowVec jp = jp_rows.colwise().mean();
    out.jac_plus = Eigen::Map<const Mat>(jp.data(), k, k);
  }
  return out;
}

// Linear-mixture layers: the joint negative log density in x = (z, u), or u when
// pinned, is a log-sum-exp of quadratics. Newton is started from every
// component's mode and the lowest objective wins.
LayerEstimate mixture_map(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus, const Mat& r_plus,
                          const Mat& gamma_plus, bool want_z, const NewtonCfg& cfg, int threads) {
  const Index n = r_plus.rows();
  const Index d = r_plus.cols();
  const Index k = layer.maps[0].cols();
  const bool pinned = gamma_minus == nullptr;
  const Mat sigma_inv = noise_precision(layer.noise_cov);
  const Index dim = pinned ? d : k + d;

  std::vector<Mat> h_base;
  std::vector<double> log_prob;
  std::vector<std::size_t> ids;
  for (std::size_t c = 0; c < layer.maps.size(); ++c) {
    if (layer.probs[c] <= 0.0) continue;
    const Mat& a = layer.maps[c];
    Mat h(dim, dim);
    if (pinned) {
      h = gamma_plus + a * sigma_inv * a.transpose();
    } else {
      h.topLeftCorner(k, k) = *gamma_minus + sigma_inv;
      h.topRightCorner(k, d) = -sigma_inv * a.transpose();
      h.bottomLeftCorner(d, k) = -a * sigma_inv;
      h.bottomRightCorner(d, d) = gamma_plus + a * sigma_inv * a.transpose();
    }
    h_base.push_back(symmetrize(h));
    log_prob.push_back(std::log(layer.probs[c]));
    ids.push_back(c);
  }

  LayerEstimate out;
  out.u_mean.resize(n, d);
  if (want_z) out.z_mean.resize(n, k);
  Mat jm_rows(n, d * d);
  Mat jp_rows(want_z ? n : 0, k * k);
  parallel_for(n, threads, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      const RowVec t = target.row(i);
      const RowVec r = r_plus.row(i);
      QuadraticMixture q;
      for (std::size_t c = 0; c < ids.size(); ++c) {
        const Mat& a = layer.maps[ids[c]];
        RowVec l(dim);
        double cc = -log_prob[c] + 0.5 * (r * gamma_plus).dot(r);
        if (pinned) {
          l = -(r * gamma_plus + t * sigma_inv * a.transpose());
          cc += 0.5 * (t * sigma_inv).dot(t);
        } else {
          l.head(k) = -(t * *gamma_minus);
          l.tail(d) = -(r * gamma_plus);
          cc += 0.5 * (t * *gamma_minus).dot(t);
        }
        q.h.push_back(h_base[c]);
        q.l.push_back(l);
        q.c.push_back(cc);
      }
      const Objective f = [&](const Vec& x, Vec* g, Mat* hh) { return q.eval(x.transpose(), g, hh); };
      NewtonOutcome best;
      best.value = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < ids.size(); ++c) {
        const Vec start = -q.h[c].llt().solve(q.l[c].transpose());
        NewtonOutcome res = newton_minimize(f, start, cfg);
        if (res.converged && res.value < best.value) best = std::move(res);
      }
      if (!std::isfinite(best.value))
        throw Error(ErrorKind::map_no_convergence, "mixture MAP did not converge at row " + std::to_string(i));
      const Mat hinv = best.hessian.ldlt().solve(Mat::Identity(dim, dim));
      if (!hinv.allFinite()) throw Error(ErrorKind::numerical, "mixture MAP: singular Hessian at the mode");
      const Index off = pinned ? 0 : k;
      out.u_mean.row(i) = best.x.segment(off, d).transpose();
      const Mat jm = gamma_plus * hinv.block(off, off, d, d);
      jm_rows.row(i) = Eigen::Map<const RowVec>(jm.data(), d * d);
      if (want_z) {
        if (pinned) {
          out.z_mean.row(i) = t;
          jp_rows.row(i).setZero();
        } else {
          out.z_mean.row(i) = best.x.head(k).transpose();
          const Mat jp = *gamma_minus * hinv.topLeftCorner(k, k);
          jp_rows.row(i) = Eigen::Map<const RowVec>(jp.data(), k * k);
        }
      }
    }
  });
  const RowVec jm = jm_rows.colwise().mean();
  out.jac_minus = Eigen::Map<const Mat>(jm.data(), d, d);
  if (want_z) {
    const RowVec jp = jp_rows.colwise().mean();
    out.jac_plus = Eigen::Map<const Mat>(jp.data(), k, k);
  }
  return out;
}

}  // namespace

LayerEstimate nonlinear_map_core(const NonlinearLayer& layer, const Mat& target, const Mat* gamma_minus,
                                 const Mat& r_plus, const Mat& gamma_plus, bool want_z, const NewtonCfg& cfg,
                                 int threads) {
  if (target.rows() != r_plus.rows())
    throw Error(ErrorKind::invalid_dimension, "nonlinear MAP denoiser: message row counts differ");
  switch (layer.kind) {
    case NoiseKind::general:
      throw Error(ErrorKind::no_density, "general nonlinear layers can be sampled but not denoised");
    case NoiseKind::linear_mixture:
      return mixture_map(layer, target, gamma_minus, r_plus, gamma_plus, want_z, cfg, threads);
    case NoiseKind::additive_gaussian:
      break;
  }
  return additive_map(layer, target, gamma_minus, r_plus, gamma_plus, want_z, cfg, threads);
}

}  // namespace mlmv::detail

namespace mlmv {

DenoiserResult nonlinear_denoise_map(const NonlinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                                     const PrecisionBundle& prec, const NewtonCfg& opt, int threads) {
  const Index k = layer.out_dim(r_plus_prev.cols());
  if (r_minus.cols() != k || prec.gamma_minus.rows() != k)
    throw Error(ErrorKind::invalid_dimension, "nonlinear_denoise_map: output-side shapes");
  auto m = detail::nonlinear_map_core(layer, r_minus, &prec.gamma_minus, r_plus_prev, prec.gamma_plus_prev, true, opt,
                                      threads);
  return {std::move(m.z_mean), std::move(m.u_mean), std::move(m.jac_plus), std::move(m.jac_minus)};
}

}  // namespace mlmv
