#include "mlmatvamp/vamp.hpp"

#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/state_evolution.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace mlmv {

namespace {

Mat precision_from_jacobian(const Mat& jac, const Mat& gamma, const PrecisionBounds& bounds, int& events) {
  Eigen::FullPivLU<Mat> lu(jac);
  if (!lu.isInvertible()) {
    // Infinite precision: the extrinsic part Lambda - Gamma saturates at the cap.
    ++events;
    return symmetrize(Mat(gamma + bounds.cap * Mat::Identity(jac.rows(), jac.cols())));
  }
  return symmetrize(Mat(lu.solve(gamma)));
}

// Gamma_new = Lambda - Gamma_other, clamped to the bounds. After a clamp Lambda is
// reset to Gamma_new + Gamma_other so the message is formed from the precision it carries.
Mat guarded_difference(Mat& lambda, const Mat& gamma, const PrecisionBounds& bounds, int& events) {
  bool clamped = false;
  Mat g = psd_regularize(Mat(lambda - gamma), bounds.floor, bounds.cap, &clamped);
  if (clamped) {
    ++events;
    lambda = symmetrize(Mat(g + gamma));
  }
  return g;
}

double weighted_mse(const Mat& est, const Mat& truth, const std::optional<Mat>& h) {
  const Mat e = est - truth;
  const double total = h ? (e * *h).cwiseProduct(e).sum() : e.squaredNorm();
  return total / static_cast<double>(e.rows());
}

std::string where(int k, int ell, const char* dir) {
  return "iteration " + std::to_string(k) + ", layer " + std::to_string(ell) + ", " + dir + ": ";
}

}  // namespace

void VampOptions::validate() const {
  if (n_iter < 1) throw Error(ErrorKind::invalid_config, "n_iter must be >= 1");
  if (!(damping > 0.0 && damping <= 1.0)) throw Error(ErrorKind::invalid_config, "damping must lie in (0, 1]");
  if (!(bounds.floor > 0.0 && bounds.floor <= bounds.cap))
    throw Error(ErrorKind::invalid_config, "precision bounds must satisfy 0 < floor <= cap");
}

VampTrace vamp_run(const NetworkModel& model, const Mat& y, const VampOptions& opts, const DenoiserSuite& suite,
                   const SignalStack* truth) {
  opts.validate();
  model.validate();
  const int L = model.num_layers();
  const Index d = model.d;
  const std::vector<Index> n = model.dims();
  if (y.rows() != n[L] || y.cols() != model.cols(L))
    throw Error(ErrorKind::invalid_dimension, "observation must be " + std::to_string(n[L]) + " x " +
                                                  std::to_string(model.cols(L)));
  if (truth && static_cast<int>(truth->z.size()) != L + 1)
    throw Error(ErrorKind::invalid_pairing, "ground truth does not match the model depth");
  if (opts.mse_weight && (opts.mse_weight->rows() != d || opts.mse_weight->cols() != d))
    throw Error(ErrorKind::invalid_config, "mse_weight must be d x d");
  const InputPrior& prior = suite.input_prior ? *suite.input_prior : model.prior;
  if (prior.d != d) throw Error(ErrorKind::invalid_config, "inference prior dimension differs from d");
  QuadratureCfg quad = suite.quad;
  quad.threads = suite.threads;

  auto trace = std::make_shared<VampTrace>();
  trace->num_layers = L;

  VampState st;
  st.r_minus.resize(L);
  st.gamma_minus = opts.gamma_minus_init.empty() ? default_initial_gammas(model) : opts.gamma_minus_init;
  if (static_cast<int>(st.gamma_minus.size()) != L)
    throw Error(ErrorKind::invalid_config, "gamma_minus_init needs one matrix per layer 0..L-1");
  for (auto& g : st.gamma_minus) {
    if (g.rows() != d || g.cols() != d) throw Error(ErrorKind::invalid_config, "gamma_minus_init must be d x d");
    g = symmetrize(g);
  }
  if (opts.init == InitMode::oracle_gaussian) {
    if (!truth) throw Error(ErrorKind::invalid_config, "oracle_gaussian initialization needs ground truth");
    const std::vector<Mat> tau = opts.oracle_tau.empty() ? signal_second_moments(model) : opts.oracle_tau;
    if (static_cast<int>(tau.size()) != L) throw Error(ErrorKind::invalid_config, "oracle_tau needs L matrices");
    const Stream init_rng(opts.init_seed);
    for (int ell = 0; ell < L; ++ell)
      st.r_minus[ell] = truth->z[ell] + gaussian_rows(n[ell], tau[ell], init_rng.derive("oracle-init",
                                                                                          static_cast<std::uint64_t>(ell)),
                                                      "row");
  } else {
    for (int ell = 0; ell < L; ++ell) st.r_minus[ell] = Mat::Zero(n[ell], d);
  }
  st.zhat_plus.resize(L);
  st.lambda_plus.resize(L);
  st.gamma_plus.resize(L);
  st.r_plus.resize(L);
  st.zhat_minus.resize(L);
  st.lambda_minus.resize(L);
  st.r_minus_next.resize(L);
  st.gamma_minus_next.resize(L);

  const double theta = opts.damping;
  auto blend = [theta](const Mat& fresh, const Mat& old) -> Mat {
    if (theta == 1.0 || old.size() == 0) return fresh;
    return theta * fresh + (1.0 - theta) * old;
  };
  auto check_finite = [&](const Mat& m, int k, int ell, const char* what) {
    if (!m.allFinite()) {
      trace->last = st;
      throw DivergedError(where(k, ell, what) + "non-finite message", trace);
    }
  };

  for (int k = 0; k < opts.n_iter; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> events(L, 0);
    const std::vector<Mat> r_plus_old = st.r_plus;
    const std::vector<Mat> gamma_plus_old = st.gamma_plus;
    // ---- forward
    for (int ell = 0; ell < L; ++ell) {
      Mat jac;
      try {
        if (ell == 0) {
          EndpointResult r = input_denoise(prior, st.r_minus[0], st.gamma_minus[0], suite.mode, suite.newton);
          st.zhat_plus[0] = std::move(r.zhat);
          jac = std::move(r.jac);
        } else {
          const PrecisionBundle prec{st.gamma_minus[ell], st.gamma_plus[ell - 1]};
          DenoiserResult r = model.is_linear(ell)
                                 ? linear_denoise(model.linear(ell), st.r_minus[ell], st.r_plus[ell - 1], prec)
                                 : nonlinear_denoise(model.nonlinear(ell), st.r_minus[ell], st.r_plus[ell - 1], prec,
                                                     suite, true);
          st.zhat_plus[ell] = std::move(r.zhat_plus);
          jac = std::move(r.jac_plus);
        }
      } catch (const Error& e) {
        throw Error(e.kind(), where(k, ell, "forward") + e.what());
      }
      st.lambda_plus[ell] = precision_from_jacobian(jac, st.gamma_minus[ell], opts.bounds, events[ell]);
      Mat gp = guarded_difference(st.lambda_plus[ell], st.gamma_minus[ell], opts.bounds, events[ell]);
      Mat rp = solve_right_spd(Mat(st.zhat_plus[ell] * st.lambda_plus[ell] - st.r_minus[ell] * st.gamma_minus[ell]),
                               gp);
      st.gamma_plus[ell] = blend(gp, k > 0 ? gamma_plus_old[ell] : Mat());
      st.r_plus[ell] = blend(rp, k > 0 ? r_plus_old[ell] : Mat());
      check_finite(st.r_plus[ell], k, ell, "forward");
    }
    // ---- backward
    for (int ell = L; ell >= 1; --ell) {
      Mat est, jac;
      try {
        if (ell == L) {
          EndpointResult r = output_denoise(model.nonlinear(L), y, st.r_plus[L - 1], st.gamma_plus[L - 1], suite.mode,
                                            quad, suite.newton);
          est = std::move(r.zhat);
          jac = std::move(r.jac);
        } else {
          const PrecisionBundle prec{st.gamma_minus_next[ell], st.gamma_plus[ell - 1]};
          DenoiserResult r =
              model.is_linear(ell)
                  ? linear_denoise(model.linear(ell), st.r_minus_next[ell], st.r_plus[ell - 1], prec)
                  : nonlinear_denoise(model.nonlinear(ell), st.r_minus_next[ell], st.r_plus[ell - 1], prec, suite,
                                      false);
          est = std::move(r.zhat_minus);
          jac = std::move(r.jac_minus);
        }
      } catch (const Error& e) {
        throw Error(e.kind(), where(k, ell, "backward") + e.what());
      }
      const int tgt = ell - 1;
      st.zhat_minus[tgt] = std::move(est);
      st.lambda_minus[tgt] = precision_from_jacobian(jac, st.gamma_plus[tgt], opts.bounds, events[tgt]);
      Mat gm = guarded_difference(st.lambda_minus[tgt], st.gamma_plus[tgt], opts.bounds, events[tgt]);
      Mat rm = solve_right_spd(
          Mat(st.zhat_minus[tgt] * st.lambda_minus[tgt] - st.r_plus[tgt] * st.gamma_plus[tgt]), gm);
      st.gamma_minus_next[tgt] = blend(gm, st.gamma_minus[tgt]);
      st.r_minus_next[tgt] = blend(rm, k > 0 || opts.init == InitMode::oracle_gaussian ? st.r_minus[tgt] : Mat());
      check_finite(st.r_minus_next[tgt], k, tgt, "backward");
    }

    IterationRecord rec;
    rec.k = k;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int ell = 0; ell < L; ++ell) {
      LayerMetrics m;
      m.mse_plus = truth ? weighted_mse(st.zhat_plus[ell], truth->z[ell], opts.mse_weight) : nan;
      m.mse_minus = truth ? weighted_mse(st.zhat_minus[ell], truth->z[ell], opts.mse_weight) : nan;
      m.gamma_plus_trace = st.gamma_plus[ell].trace();
      m.gamma_minus_trace = st.gamma_minus[ell].trace();
      m.lambda_plus_trace = st.lambda_plus[ell].trace();
      m.lambda_minus_trace = st.lambda_minus[ell].trace();
      m.safeguard_events = events[ell];
      trace->safeguard_events += events[ell];
      rec.layers.push_back(m);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    trace->iterations.push_back(std::move(rec));
    if (opts.keep_snapshots) trace->snapshots.push_back(st);
    trace->last = st;

    st.r_minus = st.r_minus_next;
    st.gamma_minus = st.gamma_minus_next;
  }
  return std::move(*trace);
}

// ---------------------------------------------------------------- MAP objective

namespace {

double prior_term(const InputPrior& prior, const Mat& z, Mat* grad) {
  const Index n = z.rows();
  const Index d = z.cols();
  if (prior.kind == InputPrior::Kind::group_lasso) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double norm = z.row(i).norm();
      total += prior.lambda * norm;
      if (grad) {
        if (norm > 1e-12) {
          grad->row(i) += prior.lambda * z.row(i) / norm;
        } else {
          // Minimum-norm element of g + lambda * (unit ball).
          const RowVec g = grad->row(i);
          const double gn = g.norm();
          grad->row(i) = gn > prior.lambda ? RowVec(g * (1.0 - prior.lambda / gn)) : RowVec(RowVec::Zero(d));
        }
      }
    }
    return total;
  }
  if (!prior.has_density()) throw Error(ErrorKind::no_density, "prior '" + prior.label + "' has no density");
  std::vector<Mat> prec;
  std::vector<double> base;
  for (std::size_t c = 0; c < prior.weights.size(); ++c) {
    if (prior.weights[c] <= 0.0) continue;
    Eigen::LLT<Mat> llt(prior.covs[c]);
    prec.push_back(llt.solve(Mat::Identity(d, d)));
    base.push_back(-std::log(prior.weights[c]) + Mat(llt.matrixL()).diagonal().array().log().sum());
  }
  std::size_t idx = 0;
  std::vector<std::size_t> ids;
  for (std::size_t c = 0; c < prior.weights.size(); ++c)
    if (prior.weights[c] > 0.0) ids.push_back(c);
  double total = 0.0;
  std::vector<double> q(prec.size());
  for (Index i = 0; i < n; ++i) {
    double qmin = std::numeric_limits<double>::infinity();
    for (idx = 0; idx < prec.size(); ++idx) {
      const RowVec dz = z.row(i) - prior.means[ids[idx]];
      q[idx] = base[idx] + 0.5 * (dz * prec[idx]).dot(dz);
      qmin = std::min(qmin, q[idx]);
    }
    double s = 0.0;
    for (double& v : q) s += (v = std::exp(-(v - qmin)));
    total += qmin - std::log(s);
    if (grad)
      for (idx = 0; idx < prec.size(); ++idx)
        grad->row(i) += (q[idx] / s) * (z.row(i) - prior.means[ids[idx]]) * prec[idx];
  }
  return total;
}

// -log p(z | u) for every row, with gradients added to gz and gu.
double nonlinear_term(const NonlinearLayer& layer, const Mat& z, const Mat& u, Mat* gz, Mat* gu) {
  if (!layer.has_density()) throw Error(ErrorKind::no_density, "layer has no transition density");
  const Mat prec = spd_inverse(layer.noise_cov);
  const Index n = u.rows();
  double total = 0.0;
  if (layer.kind == NoiseKind::additive_gaussian) {
    const Mat a = layer.readout ? *layer.readout : Mat::Identity(u.cols(), u.cols());
    const Mat e = z - layer.phi(u);
    const Mat ep = e * prec;
    total = 0.5 * ep.cwiseProduct(e).sum();
    if (gz) *gz += ep;
    if (gu) *gu -= ((ep * a.transpose()).array() * layer.act.first(u.array())).matrix();
    return total;
  }
  for (Index i = 0; i < n; ++i) {
    std::vector<double> q;
    std::vector<RowVec> r;
    double qmin = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < layer.maps.size(); ++c) {
      if (layer.probs[c] <= 0.0) continue;
      r.push_back(z.row(i) - u.row(i) * layer.maps[c]);
      q.push_back(-std::log(layer.probs[c]) + 0.5 * (r.back() * prec).dot(r.back()));
      qmin = std::min(qmin, q.back());
    }
    double s = 0.0;
    for (double& v : q) s += (v = std::exp(-(v - qmin)));
    total += qmin - std::log(s);
    std::size_t j = 0;
    for (std::size_t c = 0; c < layer.maps.size(); ++c) {
      if (layer.probs[c] <= 0.0) continue;
      const RowVec g = (q[j] / s) * r[j] * prec;
      if (gz) gz->row(i) += g;
      if (gu) gu->row(i) -= g * layer.maps[c].transpose();
      ++j;
    }
  }
  return total;
}

}  // namespace

double map_objective(const NetworkModel& model, const Mat& y, const std::vector<Mat>& z_in, std::vector<Mat>* grad,
                     const std::optional<InputPrior>& prior_override) {
  const int L = model.num_layers();
  if (static_cast<int>(z_in.size()) != L)
    throw Error(ErrorKind::invalid_pairing, "map_objective needs blocks Z_0..Z_{L-1}");
  // Noiseless linear layers pin their output block to W Z + b.
  std::vector<Mat> z = z_in;
  for (int ell = 1; ell < L; ++ell)
    if (model.is_linear(ell) && model.linear(ell).noiseless())
      z[ell] = model.linear(ell).w * z[ell - 1] + model.linear(ell).b;
  std::vector<Mat> g(L);
  for (int ell = 0; ell < L; ++ell) g[ell] = Mat::Zero(z[ell].rows(), z[ell].cols());

  double total = 0.0;
  // Top-down so pinned blocks can hand their gradient to the layer below.
  for (int ell = L; ell >= 1; --ell) {
    const Mat& out = ell == L ? y : z[ell];
    Mat* g_out = ell == L ? nullptr : &g[ell];
    if (model.is_linear(ell)) {
      const LinearLayer& l = model.linear(ell);
      if (l.noiseless()) {
        if (ell == L) throw Error(ErrorKind::no_density, "noiseless output layer");
        g[ell - 1] += l.w.transpose() * g[ell];
        g[ell].setZero();
        continue;
      }
      const Mat r = out - l.w * z[ell - 1] - l.b;
      const Mat rn = r * *l.noise_prec;
      total += 0.5 * rn.cwiseProduct(r).sum();
      if (g_out) *g_out += rn;
      g[ell - 1] -= l.w.transpose() * rn;
    } else {
      total += nonlinear_term(model.nonlinear(ell), out, z[ell - 1], g_out, &g[ell - 1]);
    }
  }
  Mat* g0 = &g[0];
  total += prior_term(prior_override ? *prior_override : model.prior, z[0], g0);
  if (grad) *grad = std::move(g);
  return total;
}

FixedPointReport fixed_point_report(const VampTrace& trace, const NetworkModel& model, const Mat& y,
                                    const DenoiserSuite& suite) {
  FixedPointReport rep;
  const int L = trace.num_layers;
  const VampState& s = trace.last;
  for (int ell = 0; ell < L; ++ell) {
    const double denom = s.zhat_plus[ell].norm();
    rep.consistency.push_back((s.zhat_plus[ell] - s.zhat_minus[ell]).norm() / (denom > 0.0 ? denom : 1.0));
  }
  if (trace.snapshots.size() >= 2) {
    const VampState& a = trace.snapshots[trace.snapshots.size() - 2];
    const VampState& b = trace.snapshots.back();
    for (int ell = 0; ell < L; ++ell)
      rep.message_motion.push_back((b.r_plus[ell] - a.r_plus[ell]).norm() + (b.r_minus[ell] - a.r_minus[ell]).norm());
  } else {
    for (int ell = 0; ell < L; ++ell)
      rep.message_motion.push_back((s.r_minus_next[ell] - s.r_minus[ell]).norm());
  }
  if (suite.mode == Mode::map) {
    std::vector<Mat> grad;
    map_objective(model, y, s.zhat_plus, &grad, suite.input_prior);
    double worst = 0.0;
    double scale = 1.0;
    for (int ell = 0; ell < L; ++ell) {
      worst = std::max(worst, grad[ell].cwiseAbs().maxCoeff());
      scale = std::max(scale, s.zhat_plus[ell].cwiseAbs().maxCoeff());
    }
    rep.map_gradient = worst;
    rep.map_gradient_scale = scale;
  }
  return rep;
}

void write_trace_csv(const VampTrace& trace, const std::string& path, const Provenance& prov) {
  CsvWriter csv(path, prov, {"k", "layer", "metric", "value"});
  for (const IterationRecord& rec : trace.iterations) {
    for (int ell = 0; ell < static_cast<int>(rec.layers.size()); ++ell) {
      const LayerMetrics& m = rec.layers[ell];
      const std::pair<const char*, double> rows[] = {
          {"mse_plus", m.mse_plus},
          {"mse_minus", m.mse_minus},
          {"gamma_plus_trace", m.gamma_plus_trace},
          {"gamma_minus_trace", m.gamma_minus_trace},
          {"lambda_plus_trace", m.lambda_plus_trace},
          {"lambda_minus_trace", m.lambda_minus_trace},
          {"safeguard_events", static_cast<double>(m.safeguard_events)},
      };
      for (const auto& [name, value] : rows) csv.field(rec.k).field(ell).field(std::string(name)).field(value).end_row();
    }
  }
}

}  // namespace mlmv
