#include "newton.hpp"

#include <cmath>
#include <limits>

namespace mlmv::detail {

NewtonOutcome newton_minimize(const Objective& f, Vec x0, const NewtonCfg& cfg) {
  NewtonOutcome out;
  out.x = std::move(x0);
  const Index n = out.x.size();
  Vec g(n);
  Mat h(n, n);
  out.value = f(out.x, &g, &h);
  for (int it = 0; it <= cfg.max_iter; ++it) {
    out.grad_norm = g.cwiseAbs().maxCoeff();
    out.hessian = h;
    out.iterations = it;
    if (!std::isfinite(out.value) || !std::isfinite(out.grad_norm)) return out;
    if (out.grad_norm <= cfg.tol) {
      out.converged = true;
      return out;
    }
    if (it == cfg.max_iter) break;

    Vec step;
    double shift = 0.0;
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::LLT<Mat> llt(h + shift * Mat::Identity(n, n));
      if (llt.info() == Eigen::Success) {
        step = -llt.solve(g);
        break;
      }
      shift = shift == 0.0 ? 1e-10 * scale : shift * 10.0;
    }
    if (step.size() != n) return out;

    const double slope = g.dot(step);
    if (-slope <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(out.value))) {
      // Predicted decrease below the rounding of f: Armijo cannot judge it, take the full step.
      out.x += step;
      out.value = f(out.x, &g, &h);
      continue;
    }
    double t = 1.0;
    Vec trial = out.x + step;
    double value = f(trial, nullptr, nullptr);
    while (!(value <= out.value + 1e-4 * t * slope) && t > 1e-14) {
      t *= 0.5;
      trial = out.x + t * step;
      value = f(trial, nullptr, nullptr);
    }
    if (!(value <= out.value + 1e-4 * t * slope)) {
      // No decrease possible in floating point: the point is as stationary as it gets.
      out.converged = out.grad_norm <= std::sqrt(cfg.tol);
      return out;
    }
    out.x = trial;
    out.value = f(out.x, &g, &h);
  }
  return out;
}

double QuadraticMixture::eval(const RowVec& u, Vec* grad, Mat* hess) const {
  const std::size_t m = h.size();
  std::vector<double> q(m);
  std::vector<Vec> dq(m);
  double qmin = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < m; ++c) {
    const RowVec uh = u * h[c];
    q[c] = 0.5 * uh.dot(u) + l[c].dot(u) + this->c[c];
    dq[c] = (uh + l[c]).transpose();
    qmin = std::min(qmin, q[c]);
  }
  double z = 0.0;
  std::vector<double> w(m);
  for (std::size_t c = 0; c < m; ++c) {
    w[c] = std::exp(-(q[c] - qmin));
    z += w[c];
  }
  for (auto& wc : w) wc /= z;
  const double value = qmin - std::log(z);
  if (grad || hess) {
    const Index d = u.size();
    Vec mean = Vec::Zero(d);
    for (std::size_t c = 0; c < m; ++c) mean += w[c] * dq[c];
    if (grad) *grad = mean;
    if (hess) {
      Mat hh = Mat::Zero(d, d);
      for (std::size_t c = 0; c < m; ++c) hh += w[c] * (h[c] - dq[c] * dq[c].transpose());
      hh += mean * mean.transpose();
      *hess = hh;
    }
  }
  return value;
}

}  // namespace mlmv::detail
