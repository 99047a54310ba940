#include "mlmatvamp/state_evolution.hpp"

#include <cmath>
#include <limits>

namespace mlmv {

namespace {

// Rotated-basis row law of a linear layer: row index m takes the balanced
// position floor(m * rows / M) among `rows` rows.
struct LinearDraws {
  Vec s;
  Mat b;
  Mat xi;
  Mat q0;
};

struct Ensemble {
  std::vector<Mat> q0;  // forward Q0_ell, ell = 0..L
  std::vector<Mat> p0;  // P0_ell, ell = 0..L-1
  std::vector<MomentEstimate> tau0;
  std::vector<LinearDraws> fwd, bwd;
};

Mat whiten(const Mat& g) {
  const Index m = g.rows();
  const Mat second = symmetrize(Mat(g.transpose() * g / static_cast<double>(m)));
  Eigen::SelfAdjointEigenSolver<Mat> eig(second);
  const Mat inv_root = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                       eig.eigenvectors().transpose();
  return g * inv_root;
}

// Standard normal rows; with moment matching the block gets an exact identity
// second moment and, when `orth` is given, zero cross moment with it.
Mat standard_block(Index m, Index d, const Stream& rng, bool moment_match, const Mat* orth = nullptr) {
  Mat g = gaussian_rows(m, Mat::Identity(d, d), rng, "std");
  if (!moment_match) return g;
  if (orth && orth->cols() > 0) {
    const Mat& p = *orth;
    g -= p * (p.transpose() * p).ldlt().solve(p.transpose() * g);
  }
  return whiten(g);
}

Mat scale_rows(const Mat& std_rows, const Mat& cov) { return std_rows * psd_sqrt(symmetrize(cov)); }

LinearDraws linear_draws(const LinearLayer& layer, const Mat& p0, Index rows, const Stream& rng) {
  const Index m = p0.rows();
  const Index d = layer.d();
  const Vec sv = layer.svd.padded(rows);
  LinearDraws out;
  out.s.resize(m);
  out.b = Mat::Zero(m, d);
  for (Index i = 0; i < m; ++i) {
    const Index idx = static_cast<Index>((static_cast<long double>(i) * rows) / m);
    out.s(i) = sv(idx);
    if (idx < layer.n_out()) out.b.row(i) = layer.b_rotated.row(idx);
  }
  out.xi = layer.noise_prec ? gaussian_rows(m, layer.noise_cov(), rng, "xi") : Mat::Zero(m, d);
  out.q0 = out.s.asDiagonal() * p0 + out.b + out.xi;
  return out;
}

MomentEstimate checked_tau(const Mat& q0, int ell, double floor) {
  MomentEstimate t = second_moment(q0);
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(t.value));
  if (!(eig.eigenvalues().minCoeff() > floor))
    throw Error(ErrorKind::degenerate_model,
                "signal second moment at layer " + std::to_string(ell) + " is degenerate (min eigenvalue " +
                    std::to_string(eig.eigenvalues().minCoeff()) + ")");
  return t;
}

Ensemble initial_ensemble(const NetworkModel& model, Index samples, const Stream& rng, bool moment_match,
                          double floor, const Mat& input_rows = Mat()) {
  model.validate();
  if (samples < 2) throw Error(ErrorKind::invalid_config, "state evolution needs at least 2 samples");
  const int L = model.num_layers();
  const Index d = model.d;
  Ensemble e;
  e.q0.resize(L + 1);
  e.p0.resize(L);
  e.tau0.resize(L + 1);
  e.fwd.resize(L + 1);
  e.bwd.resize(L + 1);
  if (input_rows.size() == 0) {
    e.q0[0] = model.prior.sample(samples, rng.derive("se-prior"));
  } else {
    if (input_rows.cols() != d) throw Error(ErrorKind::invalid_dimension, "input_rows must have d columns");
    const Index n = input_rows.rows();
    e.q0[0].resize(samples, d);
    for (Index i = 0; i < samples; ++i)
      e.q0[0].row(i) = input_rows.row(static_cast<Index>((static_cast<long double>(i) * n) / samples));
  }
  for (int ell = 0; ell <= L; ++ell) {
    if (ell > 0) {
      const Stream layer_rng = rng.derive("se-layer", static_cast<std::uint64_t>(ell));
      if (model.is_linear(ell)) {
        const LinearLayer& l = model.linear(ell);
        e.fwd[ell] = linear_draws(l, e.p0[ell - 1], l.n_out(), layer_rng.derive("fwd"));
        e.bwd[ell] = linear_draws(l, e.p0[ell - 1], l.n_in(), layer_rng.derive("bwd"));
        e.q0[ell] = e.fwd[ell].q0;
      } else {
        const NonlinearLayer& l = model.nonlinear(ell);
        e.q0[ell] = l.apply(e.p0[ell - 1], l.sample_noise(samples, d, layer_rng));
      }
    }
    if (ell < L) {
      e.tau0[ell] = checked_tau(e.q0[ell], ell, floor);
      const Mat g = standard_block(samples, d, rng.derive("se-p0", static_cast<std::uint64_t>(ell)), moment_match);
      e.p0[ell] = scale_rows(g, e.tau0[ell].value);
    } else {
      e.tau0[ell] = second_moment(e.q0[ell]);
    }
  }
  return e;
}

Mat vec_products_cov(const Mat& e) {
  const Index n = e.rows();
  const Index d = e.cols();
  Mat prods(n, d * d);
  for (Index i = 0; i < n; ++i)
    for (Index a = 0; a < d; ++a)
      for (Index b = 0; b < d; ++b) prods(i, a * d + b) = e(i, a) * e(i, b);
  const RowVec mean = prods.colwise().mean();
  const Mat centered = prods.rowwise() - mean;
  return centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(n - 1));
}

// Lambda = D^{-1} Gamma for an average jacobian D; infinite precision when D is singular.
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

Mat horizontal(const Mat& a, const Mat& b) {
  Mat out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

const SeCell& SeHistory::cell(int k, int ell) const {
  if (k < 0 || k >= static_cast<int>(cells.size()) || ell < 0 || ell >= num_layers)
    throw Error(ErrorKind::not_computed, "state evolution has no cell (k=" + std::to_string(k) +
                                             ", layer=" + std::to_string(ell) + ")");
  return cells[static_cast<std::size_t>(k)][static_cast<std::size_t>(ell)];
}

void SeOptions::validate() const {
  if (samples < 2) throw Error(ErrorKind::invalid_config, "se samples must be >= 2");
  if (n_iter < 1) throw Error(ErrorKind::invalid_config, "se n_iter must be >= 1");
  if (replicates < 1) throw Error(ErrorKind::invalid_config, "se replicates must be >= 1");
  if (!(bounds.floor > 0.0 && bounds.floor <= bounds.cap))
    throw Error(ErrorKind::invalid_config, "precision bounds must satisfy 0 < floor <= cap");
}

std::vector<MomentEstimate> se_initial_pass(const NetworkModel& model, Index samples, const Stream& rng) {
  return initial_ensemble(model, samples, rng, false, PrecisionBounds{}.floor).tau0;
}

std::vector<Mat> signal_second_moments(const NetworkModel& model) {
  const auto tau = se_initial_pass(model, 20000, Stream(0x7A00ull).derive("signal-moments"));
  std::vector<Mat> out;
  for (int ell = 0; ell < model.num_layers(); ++ell) out.push_back(tau[static_cast<std::size_t>(ell)].value);
  return out;
}

std::vector<Mat> default_initial_gammas(const NetworkModel& model) {
  std::vector<Mat> out;
  for (const Mat& t : signal_second_moments(model))
    out.push_back(Mat::Identity(t.rows(), t.cols()) * (kUninformativeScale / t.trace()));
  return out;
}

namespace {

SeHistory se_run_single(const NetworkModel& model, const SeOptions& opts, const DenoiserSuite& suite) {
  const int L = model.num_layers();
  const Index d = model.d;
  const Index m = opts.samples;
  const Stream rng(opts.seed);
  const Ensemble e = initial_ensemble(model, m, rng.derive("se-initial"), opts.moment_match, opts.bounds.floor,
                                    opts.input_rows);
  const InputPrior& inference_prior = suite.input_prior ? *suite.input_prior : model.prior;

  std::vector<Mat> gamma_minus = opts.gamma_minus_init.empty() ? default_initial_gammas(model) : opts.gamma_minus_init;
  if (static_cast<int>(gamma_minus.size()) != L)
    throw Error(ErrorKind::invalid_config, "gamma_minus_init needs one matrix per layer 0..L-1");
  for (auto& g : gamma_minus) {
    if (g.rows() != d || g.cols() != d) throw Error(ErrorKind::invalid_config, "gamma_minus_init must be d x d");
    g = symmetrize(g);
  }

  // Common random numbers across iterations.
  std::vector<Mat> z_minus(L), z_plus(L);
  for (int ell = 0; ell < L; ++ell) {
    const auto u = static_cast<std::uint64_t>(ell);
    z_minus[ell] = standard_block(m, d, rng.derive("se-qminus", u), opts.moment_match);
    z_plus[ell] = standard_block(m, d, rng.derive("se-pplus", u), opts.moment_match, &e.p0[ell]);
  }

  // Q-_{0,ell}: the forward-pass view of the initial message error.
  std::vector<Mat> q_minus(L);
  for (int ell = 0; ell < L; ++ell) {
    if (opts.init == SeInit::zero_message) {
      q_minus[ell] = -e.q0[ell];
    } else {
      const Mat tau = opts.tau_minus_init.empty() ? e.tau0[ell].value : opts.tau_minus_init.at(ell);
      q_minus[ell] = scale_rows(z_minus[ell], tau);
    }
  }

  SeHistory h;
  h.num_layers = L;
  h.samples = m;
  h.tau0 = e.tau0;
  std::vector<Mat> gamma_plus(L), p_plus(L);
  QuadratureCfg quad = suite.quad;
  quad.threads = suite.threads;

  for (int k = 0; k < opts.n_iter; ++k) {
    std::vector<SeCell> cells(L);
    // ---- forward
    for (int ell = 0; ell < L; ++ell) {
      SeCell& c = cells[ell];
      c.tau_minus = second_moment(q_minus[ell]);
      c.gamma_minus = gamma_minus[ell];
      Mat est, jac;
      const Mat* q0 = &e.q0[ell];
      const std::string where = "state evolution k=" + std::to_string(k) + " layer " + std::to_string(ell) + " forward: ";
      try {
        if (ell == 0) {
          const EndpointResult r = input_denoise(inference_prior, q_minus[0] + e.q0[0], gamma_minus[0], suite.mode,
                                                 suite.newton);
          est = r.zhat;
          jac = r.jac;
        } else if (model.is_linear(ell)) {
          const LinearDraws& w = e.fwd[ell];
          const LinearRowsResult r =
              linear_rows(w.s, w.b, q_minus[ell] + w.q0, p_plus[ell - 1] + e.p0[ell - 1], model.linear(ell).noise_prec,
                          gamma_minus[ell], gamma_plus[ell - 1], m, m);
          est = r.x;
          jac = r.jac_plus;
          q0 = &w.q0;
        } else {
          const DenoiserResult r = nonlinear_denoise(model.nonlinear(ell), q_minus[ell] + e.q0[ell],
                                                     p_plus[ell - 1] + e.p0[ell - 1],
                                                     {gamma_minus[ell], gamma_plus[ell - 1]}, suite, true);
          est = r.zhat_plus;
          jac = r.jac_plus;
        }
      } catch (const Error& err) {
        throw Error(err.kind(), where + err.what());
      }
      c.lambda_plus = precision_from_jacobian(jac, gamma_minus[ell], opts.bounds, h.safeguard_events);
      gamma_plus[ell] = guarded_difference(c.lambda_plus, gamma_minus[ell], opts.bounds, h.safeguard_events);
      c.gamma_plus = gamma_plus[ell];
      const Mat err = est - *q0;
      const Mat q_plus = solve_right_spd(Mat(err * c.lambda_plus - q_minus[ell] * gamma_minus[ell]), gamma_plus[ell]);
      if (!q_plus.allFinite()) throw Error(ErrorKind::diverged, where + "non-finite Q+");
      c.k_plus = second_moment(horizontal(*q0, q_plus));
      c.err_plus = second_moment(err);
      c.err_plus_cov = vec_products_cov(err);
      c.joint_estimate = second_moment(horizontal(*q0, est));

      // P+ | P0 ~ N(P0 tau0^{-1} K12, K22 - K21 tau0^{-1} K12)
      const Mat& kp = c.k_plus.value;
      const Mat k11 = kp.topLeftCorner(d, d);
      const Mat k12 = kp.topRightCorner(d, d);
      const Mat gain = k11.ldlt().solve(k12);
      const Mat cond = psd_regularize(Mat(kp.bottomRightCorner(d, d) - k12.transpose() * gain), 0.0,
                                      std::numeric_limits<double>::max());
      p_plus[ell] = e.p0[ell] * gain + scale_rows(z_plus[ell], cond);
    }
    // ---- backward
    std::vector<Mat> gamma_minus_next(L), q_minus_next(L);
    for (int ell = L; ell >= 1; --ell) {
      Mat est, jac;
      const std::string where =
          "state evolution k=" + std::to_string(k) + " layer " + std::to_string(ell) + " backward: ";
      try {
        if (ell == L) {
          const EndpointResult r = output_denoise(model.nonlinear(L), e.q0[L], p_plus[L - 1] + e.p0[L - 1],
                                                  gamma_plus[L - 1], suite.mode, quad, suite.newton);
          est = r.zhat;
          jac = r.jac;
        } else if (model.is_linear(ell)) {
          const LinearDraws& w = e.bwd[ell];
          const LinearRowsResult r =
              linear_rows(w.s, w.b, q_minus_next[ell] + w.q0, p_plus[ell - 1] + e.p0[ell - 1],
                          model.linear(ell).noise_prec, gamma_minus_next[ell], gamma_plus[ell - 1], m, m);
          est = r.u;
          jac = r.jac_minus;
        } else {
          const DenoiserResult r = nonlinear_denoise(model.nonlinear(ell), q_minus_next[ell] + e.q0[ell],
                                                     p_plus[ell - 1] + e.p0[ell - 1],
                                                     {gamma_minus_next[ell], gamma_plus[ell - 1]}, suite, false);
          est = r.zhat_minus;
          jac = r.jac_minus;
        }
      } catch (const Error& err) {
        throw Error(err.kind(), where + err.what());
      }
      SeCell& c = cells[ell - 1];
      c.lambda_minus = precision_from_jacobian(jac, gamma_plus[ell - 1], opts.bounds, h.safeguard_events);
      gamma_minus_next[ell - 1] =
          guarded_difference(c.lambda_minus, gamma_plus[ell - 1], opts.bounds, h.safeguard_events);
      c.gamma_minus_next = gamma_minus_next[ell - 1];
      const Mat err = est - e.p0[ell - 1];
      const Mat p_minus = solve_right_spd(Mat(err * c.lambda_minus - p_plus[ell - 1] * gamma_plus[ell - 1]),
                                          gamma_minus_next[ell - 1]);
      if (!p_minus.allFinite()) throw Error(ErrorKind::diverged, where + "non-finite P-");
      c.err_minus = second_moment(err);
      c.err_minus_cov = vec_products_cov(err);
      q_minus_next[ell - 1] = scale_rows(z_minus[ell - 1], second_moment(p_minus).value);
    }
    h.cells.push_back(std::move(cells));
    gamma_minus = std::move(gamma_minus_next);
    q_minus = std::move(q_minus_next);
  }
  return h;
}

std::uint64_t replicate_seed(std::uint64_t seed, int r) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(r + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

MomentEstimate pool(const std::vector<const MomentEstimate*>& xs) {
  const double r = static_cast<double>(xs.size());
  MomentEstimate out;
  out.value = Mat::Zero(xs[0]->value.rows(), xs[0]->value.cols());
  for (const MomentEstimate* x : xs) out.value += x->value / r;
  Mat var = Mat::Zero(out.value.rows(), out.value.cols());
  for (const MomentEstimate* x : xs) var += (x->value - out.value).cwiseAbs2() / (r - 1.0);
  out.std_error = (var / r).cwiseSqrt();
  return out;
}

Mat average(const std::vector<const Mat*>& xs) {
  Mat out = Mat::Zero(xs[0]->rows(), xs[0]->cols());
  for (const Mat* x : xs) out += *x / static_cast<double>(xs.size());
  return out;
}

// Pools independent replicate recursions: values are replicate means and
// standard errors the replicate spread over sqrt(R).
SeHistory pool_replicates(std::vector<SeHistory> runs) {
  SeHistory h;
  const SeHistory& first = runs.front();
  h.num_layers = first.num_layers;
  h.samples = first.samples;
  for (const SeHistory& r : runs) h.safeguard_events += r.safeguard_events;
  for (std::size_t ell = 0; ell < first.tau0.size(); ++ell) {
    std::vector<const MomentEstimate*> xs;
    for (const SeHistory& r : runs) xs.push_back(&r.tau0[ell]);
    h.tau0.push_back(pool(xs));
  }
  for (std::size_t k = 0; k < first.cells.size(); ++k) {
    std::vector<SeCell> row(first.cells[k].size());
    for (std::size_t ell = 0; ell < row.size(); ++ell) {
      auto moments = [&](MomentEstimate SeCell::*f) {
        std::vector<const MomentEstimate*> xs;
        for (const SeHistory& r : runs) xs.push_back(&(r.cells[k][ell].*f));
        return pool(xs);
      };
      auto mats = [&](Mat SeCell::*f) {
        std::vector<const Mat*> xs;
        for (const SeHistory& r : runs) xs.push_back(&(r.cells[k][ell].*f));
        return average(xs);
      };
      SeCell& c = row[ell];
      c.k_plus = moments(&SeCell::k_plus);
      c.tau_minus = moments(&SeCell::tau_minus);
      c.err_plus = moments(&SeCell::err_plus);
      c.err_minus = moments(&SeCell::err_minus);
      c.joint_estimate = moments(&SeCell::joint_estimate);
      c.gamma_minus = mats(&SeCell::gamma_minus);
      c.lambda_plus = mats(&SeCell::lambda_plus);
      c.gamma_plus = mats(&SeCell::gamma_plus);
      c.lambda_minus = mats(&SeCell::lambda_minus);
      c.gamma_minus_next = mats(&SeCell::gamma_minus_next);
      c.err_plus_cov = mats(&SeCell::err_plus_cov);
      c.err_minus_cov = mats(&SeCell::err_minus_cov);
    }
    h.cells.push_back(std::move(row));
  }
  h.runs = std::move(runs);
  return h;
}

Estimate single_layer_mse(const SeHistory& se, int ell, int k, const Mat& h, bool plus_side) {
  const SeCell& c = se.cell(k, ell);
  const MomentEstimate& mom = plus_side ? c.err_plus : c.err_minus;
  const Mat& cov = plus_side ? c.err_plus_cov : c.err_minus_cov;
  const Index d = mom.value.rows();
  if (h.rows() != d || h.cols() != d) throw Error(ErrorKind::invalid_dimension, "predict_layer_mse: weight shape");
  Estimate out;
  out.value = (h * mom.value).trace();
  Vec w(d * d);
  for (Index a = 0; a < d; ++a)
    for (Index b = 0; b < d; ++b) w(a * d + b) = h(b, a);
  out.std_error = std::sqrt(std::max(0.0, w.dot(cov * w)) / static_cast<double>(se.samples));
  return out;
}

}  // namespace

SeHistory se_run(const NetworkModel& model, const SeOptions& opts, const DenoiserSuite& suite) {
  opts.validate();
  if (opts.replicates == 1) return se_run_single(model, opts, suite);
  std::vector<SeHistory> runs;
  for (int r = 0; r < opts.replicates; ++r) {
    SeOptions o = opts;
    o.seed = replicate_seed(opts.seed, r);
    runs.push_back(se_run_single(model, o, suite));
  }
  return pool_replicates(std::move(runs));
}

Estimate predict_layer_mse(const SeHistory& se, int ell, int k, const Mat& h, bool plus_side) {
  if (se.runs.empty()) return single_layer_mse(se, ell, k, h, plus_side);
  const double r = static_cast<double>(se.runs.size());
  std::vector<double> v;
  for (const SeHistory& run : se.runs) v.push_back(single_layer_mse(run, ell, k, h, plus_side).value);
  Estimate out;
  for (double x : v) out.value += x / r;
  double var = 0.0;
  for (double x : v) var += (x - out.value) * (x - out.value) / (r - 1.0);
  out.std_error = std::sqrt(var / r);
  return out;
}

Estimate predict_test_error(const Mat& k, const Vec& f2, const Activation& act, Index samples, const Stream& rng) {
  const Index d = f2.size();
  if (k.rows() != 2 * d || k.cols() != 2 * d)
    throw Error(ErrorKind::invalid_dimension, "predict_test_error: K must be 2d x 2d");
  if (samples < 2) throw Error(ErrorKind::invalid_config, "predict_test_error: samples must be >= 2");
  const Mat draws = gaussian_rows(samples, symmetrize(k), rng, "test-error");
  const Vec diff = (act.value(draws.leftCols(d).array()) - act.value(draws.rightCols(d).array())).matrix() * f2;
  const Arr sq = diff.array().square();
  Estimate out;
  out.value = sq.mean();
  const double var = (sq - out.value).square().sum() / static_cast<double>(samples - 1);
  out.std_error = std::sqrt(var / static_cast<double>(samples));
  return out;
}

void write_se_csv(const SeHistory& se, const std::string& path, const Provenance& prov) {
  CsvWriter csv(path, prov, {"k", "layer", "quantity", "i", "j", "value", "stderr"});
  auto emit = [&](int k, int ell, const char* name, const Mat& v, const Mat* sd) {
    for (Index i = 0; i < v.rows(); ++i)
      for (Index j = 0; j < v.cols(); ++j) {
        csv.field(k).field(ell).field(std::string(name)).field(i).field(j).field(v(i, j));
        csv.field(sd ? (*sd)(i, j) : 0.0);
        csv.end_row();
      }
  };
  for (int ell = 0; ell < static_cast<int>(se.tau0.size()); ++ell)
    emit(0, ell, "tau0", se.tau0[ell].value, &se.tau0[ell].std_error);
  for (int k = 0; k < static_cast<int>(se.cells.size()); ++k) {
    for (int ell = 0; ell < se.num_layers; ++ell) {
      const SeCell& c = se.cell(k, ell);
      emit(k, ell, "k_plus", c.k_plus.value, &c.k_plus.std_error);
      emit(k, ell, "tau_minus", c.tau_minus.value, &c.tau_minus.std_error);
      emit(k, ell, "gamma_minus", c.gamma_minus, nullptr);
      emit(k, ell, "lambda_plus", c.lambda_plus, nullptr);
      emit(k, ell, "gamma_plus", c.gamma_plus, nullptr);
      emit(k, ell, "lambda_minus", c.lambda_minus, nullptr);
      const Mat id = Mat::Identity(c.err_plus.value.rows(), c.err_plus.value.cols());
      const Estimate mp = predict_layer_mse(se, ell, k, id, true);
      const Estimate mm = predict_layer_mse(se, ell, k, id, false);
      const Mat mp_v = Mat::Constant(1, 1, mp.value), mp_s = Mat::Constant(1, 1, mp.std_error);
      const Mat mm_v = Mat::Constant(1, 1, mm.value), mm_s = Mat::Constant(1, 1, mm.std_error);
      emit(k, ell, "mse_plus", mp_v, &mp_s);
      emit(k, ell, "mse_minus", mm_v, &mm_s);
      if (ell == 0) emit(k, ell, "joint_estimate", c.joint_estimate.value, &c.joint_estimate.std_error);
    }
  }
}

}  // namespace mlmv
