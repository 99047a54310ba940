#include "mlmatvamp/model.hpp"

#include <cmath>
#include <numeric>

namespace mlmv {

namespace {

void require_square(const Mat& m, Index n, const char* what) {
  if (m.rows() != n || m.cols() != n)
    throw Error(ErrorKind::invalid_dimension, std::string(what) + ": expected " + std::to_string(n) + "x" +
                                                  std::to_string(n));
}

bool positive_definite(const Mat& m) {
  if (m.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(m));
  return eig.eigenvalues().minCoeff() > 0.0;
}

}  // namespace

Mat gaussian_rows(Index n, const Mat& cov, const Stream& rng, std::string_view tag) {
  const Mat root = psd_sqrt(cov);
  const Index k = cov.rows();
  Mat g(n, k);
  for (Index i = 0; i < n; ++i) {
    Stream s = rng.derive(tag, static_cast<std::uint64_t>(i));
    for (Index j = 0; j < k; ++j) g(i, j) = s.normal();
  }
  return g * root;
}

// ---------------------------------------------------------------- priors

InputPrior InputPrior::gaussian(const Mat& cov) { return gaussian(RowVec::Zero(cov.rows()), cov); }

InputPrior InputPrior::gaussian(const RowVec& mean, const Mat& cov) {
  require_square(cov, mean.size(), "gaussian prior covariance");
  psd_sqrt(cov);
  InputPrior p;
  p.label = "gaussian";
  p.d = mean.size();
  p.weights = {1.0};
  p.means = {mean};
  p.covs = {symmetrize(cov)};
  return p;
}

InputPrior InputPrior::point_mass(Index d) {
  InputPrior p = gaussian(Mat::Zero(d, d));
  p.label = "point_mass";
  return p;
}

InputPrior InputPrior::bernoulli_gaussian(Index d, double rho, double variance) {
  if (!(rho >= 0.0 && rho <= 1.0) || !(variance > 0.0))
    throw Error(ErrorKind::invalid_config, "bernoulli_gaussian needs rho in [0,1] and variance > 0");
  InputPrior p = mixture({1.0 - rho, rho}, {RowVec::Zero(d), RowVec::Zero(d)},
                         {Mat::Zero(d, d), variance * Mat::Identity(d, d)});
  p.label = "bernoulli_gaussian";
  p.rho = rho;
  p.variance = variance;
  return p;
}

InputPrior InputPrior::mixture(std::vector<double> weights, std::vector<RowVec> means, std::vector<Mat> covs) {
  if (weights.empty() || weights.size() != means.size() || weights.size() != covs.size())
    throw Error(ErrorKind::invalid_config, "mixture prior: component lists differ in length");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw Error(ErrorKind::invalid_config, "mixture prior: weights must sum to a positive value");
  InputPrior p;
  p.label = "gaussian_mixture";
  p.d = means[0].size();
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (weights[c] < 0.0) throw Error(ErrorKind::invalid_config, "mixture prior: negative weight");
    if (means[c].size() != p.d) throw Error(ErrorKind::invalid_dimension, "mixture prior: mean size");
    require_square(covs[c], p.d, "mixture prior covariance");
    psd_sqrt(covs[c]);
    p.weights.push_back(weights[c] / total);
    p.means.push_back(means[c]);
    p.covs.push_back(symmetrize(covs[c]));
  }
  return p;
}

InputPrior InputPrior::group_lasso(Index d, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::invalid_config, "group_lasso needs lambda >= 0");
  InputPrior p;
  p.kind = Kind::group_lasso;
  p.label = "group_lasso";
  p.d = d;
  p.lambda = lambda;
  return p;
}

bool InputPrior::has_density() const {
  if (kind == Kind::group_lasso) return true;
  for (std::size_t c = 0; c < covs.size(); ++c)
    if (weights[c] > 0.0 && !positive_definite(covs[c])) return false;
  return true;
}

Mat InputPrior::sample(Index n, const Stream& rng) const {
  if (!samplable()) throw Error(ErrorKind::unsupported, "prior '" + label + "' has no sampling law");
  std::vector<Mat> roots;
  for (const Mat& c : covs) roots.push_back(psd_sqrt(c));
  Mat out(n, d);
  for (Index i = 0; i < n; ++i) {
    Stream s = rng.derive("prior-row", static_cast<std::uint64_t>(i));
    std::size_t comp = 0;
    if (weights.size() > 1) {
      const double u = s.uniform();
      double acc = 0.0;
      comp = weights.size() - 1;
      for (std::size_t c = 0; c < weights.size(); ++c) {
        acc += weights[c];
        if (u < acc) {
          comp = c;
          break;
        }
      }
    }
    RowVec g(d);
    for (Index j = 0; j < d; ++j) g(j) = s.normal();
    out.row(i) = means[comp] + g * roots[comp];
  }
  return out;
}

Mat InputPrior::second_moment() const {
  if (!samplable()) throw Error(ErrorKind::unsupported, "prior '" + label + "' has no second moment");
  Mat m = Mat::Zero(d, d);
  for (std::size_t c = 0; c < weights.size(); ++c)
    m += weights[c] * (covs[c] + means[c].transpose() * means[c]);
  return m;
}

// ---------------------------------------------------------------- linear layer

LinearLayer LinearLayer::make(Mat w, Mat b, std::optional<Mat> noise_prec) {
  if (b.rows() != w.rows()) throw Error(ErrorKind::invalid_model, "bias rows must equal weight rows");
  if (noise_prec) {
    require_square(*noise_prec, b.cols(), "noise precision");
    if (!positive_definite(*noise_prec)) throw Error(ErrorKind::invalid_model, "noise precision must be positive definite");
    *noise_prec = symmetrize(*noise_prec);
  }
  LinearLayer l;
  l.w = std::move(w);
  l.b = std::move(b);
  l.noise_prec = std::move(noise_prec);
  l.svd = svd_factor(l.w);
  l.b_rotated = l.svd.v_out.transpose() * l.b;
  return l;
}

Mat LinearLayer::noise_cov() const {
  if (!noise_prec) return Mat::Zero(d(), d());
  return spd_inverse(*noise_prec);
}

Mat propagate_linear(const LinearLayer& layer, const Mat& z_prev, const Mat& xi) {
  Mat z = layer.w * z_prev + layer.b;
  if (layer.noise_prec) z += xi;
  return z;
}

double log_transition(const LinearLayer& layer, const Mat& z, const Mat& z_prev) {
  if (!layer.noise_prec) throw Error(ErrorKind::no_density, "noiseless linear layer has no transition density");
  const Mat r = z - layer.w * z_prev - layer.b;
  return -0.5 * (r * *layer.noise_prec).cwiseProduct(r).sum();
}

// ---------------------------------------------------------------- nonlinear layer

NonlinearLayer NonlinearLayer::additive(Activation act, Mat noise_cov, std::optional<Mat> readout) {
  NonlinearLayer l;
  l.kind = NoiseKind::additive_gaussian;
  l.act = std::move(act);
  l.readout = std::move(readout);
  const Index out = l.readout ? l.readout->cols() : noise_cov.rows();
  require_square(noise_cov, out, "nonlinear noise covariance");
  psd_sqrt(noise_cov);
  l.noise_cov = symmetrize(noise_cov);
  return l;
}

NonlinearLayer NonlinearLayer::committee(Activation act, const Vec& second_layer, double noise_var) {
  if (!(noise_var >= 0.0)) throw Error(ErrorKind::invalid_config, "noise variance must be >= 0");
  return additive(std::move(act), Mat::Constant(1, 1, noise_var), Mat(second_layer));
}

NonlinearLayer NonlinearLayer::linear_mixture(std::vector<Mat> maps, std::vector<double> probs, Mat noise_cov) {
  if (maps.empty() || maps.size() != probs.size())
    throw Error(ErrorKind::invalid_config, "linear mixture: maps and probabilities differ in length");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::invalid_config, "linear mixture: probability outside [0,1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error(ErrorKind::invalid_config, "linear mixture: probabilities must sum to 1");
  for (const Mat& m : maps)
    if (m.rows() != maps[0].rows() || m.cols() != maps[0].cols())
      throw Error(ErrorKind::invalid_dimension, "linear mixture: map shapes differ");
  require_square(noise_cov, maps[0].cols(), "linear mixture noise covariance");
  psd_sqrt(noise_cov);
  NonlinearLayer l;
  l.kind = NoiseKind::linear_mixture;
  l.maps = std::move(maps);
  l.probs = std::move(probs);
  l.noise_cov = symmetrize(noise_cov);
  return l;
}

NonlinearLayer NonlinearLayer::general(Index noise_dim, std::function<RowVec(Stream&)> sampler,
                                       std::function<RowVec(const RowVec&, const RowVec&)> map, Index out_dim) {
  if (!sampler || !map) throw Error(ErrorKind::invalid_config, "general layer needs a sampler and a map");
  NonlinearLayer l;
  l.kind = NoiseKind::general;
  l.noise_dim = noise_dim;
  l.sampler = std::move(sampler);
  l.general_map = std::move(map);
  l.general_out_ = out_dim;
  return l;
}

Index NonlinearLayer::out_dim(Index d_in) const {
  switch (kind) {
    case NoiseKind::additive_gaussian: return readout ? readout->cols() : d_in;
    case NoiseKind::linear_mixture: return maps[0].cols();
    case NoiseKind::general: return general_out_;
  }
  return d_in;
}

Index NonlinearLayer::xi_dim(Index d_in) const {
  switch (kind) {
    case NoiseKind::additive_gaussian: return out_dim(d_in);
    case NoiseKind::linear_mixture: return 1 + out_dim(d_in);
    case NoiseKind::general: return noise_dim;
  }
  return 0;
}

bool NonlinearLayer::has_density() const {
  if (kind == NoiseKind::general) return false;
  return positive_definite(noise_cov);
}

bool NonlinearLayer::is_linear_gaussian() const {
  return kind == NoiseKind::additive_gaussian && act.is_linear();
}

Mat NonlinearLayer::phi(const Mat& u) const {
  if (kind != NoiseKind::additive_gaussian)
    throw Error(ErrorKind::unsupported, "phi() is defined for additive Gaussian layers");
  const Mat a = act.value(u.array()).matrix();
  return readout ? Mat(a * *readout) : a;
}

Mat NonlinearLayer::apply(const Mat& u, const Mat& xi) const {
  const Index n = u.rows();
  switch (kind) {
    case NoiseKind::additive_gaussian: return phi(u) + xi;
    case NoiseKind::linear_mixture: {
      Mat z(n, out_dim(u.cols()));
      for (Index i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(xi(i, 0));
        z.row(i) = u.row(i) * maps.at(c) + xi.row(i).tail(xi.cols() - 1);
      }
      return z;
    }
    case NoiseKind::general: {
      Mat z(n, general_out_);
      for (Index i = 0; i < n; ++i) z.row(i) = general_map(u.row(i), xi.row(i));
      return z;
    }
  }
  return u;
}

Mat NonlinearLayer::sample_noise(Index n, Index d_in, const Stream& rng) const {
  switch (kind) {
    case NoiseKind::additive_gaussian: return gaussian_rows(n, noise_cov, rng, "additive");
    case NoiseKind::linear_mixture: {
      const Index out = out_dim(d_in);
      Mat xi(n, 1 + out);
      xi.rightCols(out) = gaussian_rows(n, noise_cov, rng, "additive");
      for (Index i = 0; i < n; ++i) {
        Stream s = rng.derive("selector", static_cast<std::uint64_t>(i));
        const double u = s.uniform();
        double acc = 0.0;
        std::size_t comp = probs.size() - 1;
        for (std::size_t c = 0; c < probs.size(); ++c) {
          acc += probs[c];
          if (u < acc) {
            comp = c;
            break;
          }
        }
        xi(i, 0) = static_cast<double>(comp);
      }
      return xi;
    }
    case NoiseKind::general: {
      Mat xi(n, noise_dim);
      for (Index i = 0; i < n; ++i) {
        Stream s = rng.derive("general", static_cast<std::uint64_t>(i));
        xi.row(i) = sampler(s);
      }
      return xi;
    }
  }
  return Mat();
}

double log_transition(const NonlinearLayer& layer, const RowVec& z, const RowVec& u) {
  if (!layer.has_density()) throw Error(ErrorKind::no_density, "layer has no transition density");
  const Mat prec = spd_inverse(layer.noise_cov);
  if (layer.kind == NoiseKind::additive_gaussian) {
    const RowVec r = z - layer.phi(u);
    return -0.5 * (r * prec * r.transpose())(0, 0);
  }
  double best = -INFINITY;
  std::vector<double> terms;
  for (std::size_t c = 0; c < layer.maps.size(); ++c) {
    if (layer.probs[c] <= 0.0) continue;
    const RowVec r = z - u * layer.maps[c];
    terms.push_back(std::log(layer.probs[c]) - 0.5 * (r * prec * r.transpose())(0, 0));
    best = std::max(best, terms.back());
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

// ---------------------------------------------------------------- network

const LinearLayer& NetworkModel::linear(int ell) const {
  if (ell < 1 || ell > num_layers() || !is_linear(ell))
    throw Error(ErrorKind::invalid_model, "layer " + std::to_string(ell) + " is not linear");
  return std::get<LinearLayer>(layers[ell - 1]);
}

const NonlinearLayer& NetworkModel::nonlinear(int ell) const {
  if (ell < 1 || ell > num_layers() || is_linear(ell))
    throw Error(ErrorKind::invalid_model, "layer " + std::to_string(ell) + " is not nonlinear");
  return std::get<NonlinearLayer>(layers[ell - 1]);
}

bool NetworkModel::is_linear(int ell) const { return std::holds_alternative<LinearLayer>(layers.at(ell - 1)); }

std::vector<Index> NetworkModel::dims() const {
  std::vector<Index> n{n0};
  for (int ell = 1; ell <= num_layers(); ++ell)
    n.push_back(is_linear(ell) ? linear(ell).n_out() : n.back());
  return n;
}

Index NetworkModel::cols(int ell) const {
  if (ell < num_layers()) return d;
  return nonlinear(ell).out_dim(d);
}

void NetworkModel::validate() const {
  if (d < 1 || n0 < 1) throw Error(ErrorKind::invalid_model, "d and n0 must be positive");
  const int L = num_layers();
  if (L < 2 || L % 2 != 0) throw Error(ErrorKind::invalid_model, "layer count must be even and >= 2");
  if (prior.d != d) throw Error(ErrorKind::invalid_model, "prior dimension differs from d");
  Index n_prev = n0;
  for (int ell = 1; ell <= L; ++ell) {
    const bool odd = ell % 2 == 1;
    if (odd != is_linear(ell))
      throw Error(ErrorKind::invalid_model, "layer " + std::to_string(ell) + " has the wrong kind for its parity");
    if (odd) {
      const LinearLayer& l = linear(ell);
      if (l.n_in() != n_prev || l.d() != d)
        throw Error(ErrorKind::invalid_model, "layer " + std::to_string(ell) + " dimensions do not chain");
      n_prev = l.n_out();
    } else {
      const NonlinearLayer& l = nonlinear(ell);
      if (l.kind == NoiseKind::additive_gaussian && l.readout && l.readout->rows() != d)
        throw Error(ErrorKind::invalid_model, "readout rows must equal d at layer " + std::to_string(ell));
      if (l.kind == NoiseKind::linear_mixture && l.maps[0].rows() != d)
        throw Error(ErrorKind::invalid_model, "mixture maps must have d rows at layer " + std::to_string(ell));
      if (ell < L && l.out_dim(d) != d)
        throw Error(ErrorKind::invalid_model, "hidden nonlinear layer " + std::to_string(ell) + " must keep d columns");
    }
  }
}

SignalStack generate_signals(const NetworkModel& model, const Stream& rng) {
  model.validate();
  const int L = model.num_layers();
  const std::vector<Index> n = model.dims();
  SignalStack s;
  s.z.resize(L + 1);
  s.xi.resize(L + 1);
  s.z[0] = model.prior.sample(model.n0, rng.derive("prior"));
  for (int ell = 1; ell <= L; ++ell) {
    const Stream noise = rng.derive("layer-noise", static_cast<std::uint64_t>(ell));
    if (model.is_linear(ell)) {
      const LinearLayer& l = model.linear(ell);
      s.xi[ell] = l.noise_prec ? gaussian_rows(n[ell], l.noise_cov(), noise, "linear") : Mat::Zero(n[ell], model.d);
      s.z[ell] = propagate_linear(l, s.z[ell - 1], s.xi[ell]);
    } else {
      const NonlinearLayer& l = model.nonlinear(ell);
      s.xi[ell] = l.sample_noise(n[ell], model.d, noise);
      s.z[ell] = l.apply(s.z[ell - 1], s.xi[ell]);
    }
  }
  return s;
}

double replay_residual(const NetworkModel& model, const SignalStack& s) {
  double worst = 0.0;
  for (int ell = 1; ell <= model.num_layers(); ++ell) {
    const Mat z = model.is_linear(ell) ? propagate_linear(model.linear(ell), s.z[ell - 1], s.xi[ell])
                                       : model.nonlinear(ell).apply(s.z[ell - 1], s.xi[ell]);
    if (z.rows() != s.z[ell].rows() || z.cols() != s.z[ell].cols()) return INFINITY;
    worst = std::max(worst, (z - s.z[ell]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace mlmv
