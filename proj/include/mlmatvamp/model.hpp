#pragma once

#include "mlmatvamp/activation.hpp"
#include "mlmatvamp/core.hpp"
#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mlmv {

// Row law of Z_0. Gaussian, point mass and Bernoulli-Gaussian are mixtures of
// Gaussians; group_lasso is a penalty exp(-lambda ||row||_2) usable only in MAP mode.
struct InputPrior {
  enum class Kind { gaussian_mixture, group_lasso };

  Kind kind = Kind::gaussian_mixture;
  std::string label = "gaussian";
  Index d = 0;
  std::vector<double> weights;
  std::vector<RowVec> means;
  std::vector<Mat> covs;
  double lambda = 0.0;
  double rho = 1.0;       // bernoulli_gaussian: active fraction
  double variance = 1.0;  // bernoulli_gaussian: active variance

  static InputPrior gaussian(const Mat& cov);
  static InputPrior gaussian(const RowVec& mean, const Mat& cov);
  static InputPrior point_mass(Index d);
  static InputPrior bernoulli_gaussian(Index d, double rho, double variance);
  static InputPrior mixture(std::vector<double> weights, std::vector<RowVec> means, std::vector<Mat> covs);
  static InputPrior group_lasso(Index d, double lambda);

  bool samplable() const { return kind == Kind::gaussian_mixture; }
  bool has_density() const;
  Mat sample(Index n, const Stream& rng) const;
  Mat second_moment() const;
};

struct LinearLayer {
  Mat w;                        // n_out x n_in
  Mat b;                        // n_out x d
  std::optional<Mat> noise_prec;  // row precision of the additive noise; nullopt = noiseless
  SvdFactors<double> svd;
  Mat b_rotated;                // v_out^T b

  static LinearLayer make(Mat w, Mat b, std::optional<Mat> noise_prec);

  Index n_out() const { return w.rows(); }
  Index n_in() const { return w.cols(); }
  Index d() const { return b.cols(); }
  bool noiseless() const { return !noise_prec.has_value(); }
  Mat noise_cov() const;
};

enum class NoiseKind { additive_gaussian, linear_mixture, general };

// z = act(u) * readout + xi, xi ~ N(0, noise_cov)             (additive_gaussian)
// z = u * maps[c] + xi with P(c) = probs[c], xi ~ N(0, noise_cov) (linear_mixture)
// z = general_map(u, xi), xi from sampler                      (general)
struct NonlinearLayer {
  NoiseKind kind = NoiseKind::additive_gaussian;
  Activation act;
  std::optional<Mat> readout;  // d_in x d_out; identity when absent
  Mat noise_cov;
  std::vector<Mat> maps;
  std::vector<double> probs;
  Index noise_dim = 0;
  std::function<RowVec(Stream&)> sampler;
  std::function<RowVec(const RowVec& u, const RowVec& xi)> general_map;

  static NonlinearLayer additive(Activation act, Mat noise_cov, std::optional<Mat> readout = std::nullopt);
  static NonlinearLayer committee(Activation act, const Vec& second_layer, double noise_var);
  static NonlinearLayer linear_mixture(std::vector<Mat> maps, std::vector<double> probs, Mat noise_cov);
  static NonlinearLayer general(Index noise_dim, std::function<RowVec(Stream&)> sampler,
                                std::function<RowVec(const RowVec&, const RowVec&)> map, Index out_dim);

  Index out_dim(Index d_in) const;
  Index xi_dim(Index d_in) const;
  bool has_density() const;
  bool is_linear_gaussian() const;

  // Noise-free part act(u) * readout for additive layers, rows of u.
  Mat phi(const Mat& u) const;
  // Full map applied row-wise given the stored noise realization.
  Mat apply(const Mat& u, const Mat& xi) const;
  // One noise row per input row, each from its own derived stream.
  Mat sample_noise(Index n, Index d_in, const Stream& rng) const;

 private:
  Index general_out_ = 0;
};

using Layer = std::variant<LinearLayer, NonlinearLayer>;

// Layers are indexed 1..L as in the generative chain Z_1, ..., Z_L = Y; odd
// layers are linear, even layers nonlinear, L even.
struct NetworkModel {
  Index d = 0;
  Index n0 = 0;
  InputPrior prior;
  std::vector<Layer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  const LinearLayer& linear(int ell) const;
  const NonlinearLayer& nonlinear(int ell) const;
  bool is_linear(int ell) const;
  std::vector<Index> dims() const;
  // Column count of Z_ell: d except possibly at the output.
  Index cols(int ell) const;
  void validate() const;
};

struct SignalStack {
  std::vector<Mat> z;   // Z_0 ... Z_L
  std::vector<Mat> xi;  // xi[ell] for ell >= 1; xi[0] empty
};

SignalStack generate_signals(const NetworkModel& model, const Stream& rng);

// Largest absolute deviation when re-applying each layer to the stored inputs and noise.
double replay_residual(const NetworkModel& model, const SignalStack& s);

Mat propagate_linear(const LinearLayer& layer, const Mat& z_prev, const Mat& xi);

// log p(z | u) up to an additive constant, for layers with a density.
double log_transition(const NonlinearLayer& layer, const RowVec& z, const RowVec& u);
double log_transition(const LinearLayer& layer, const Mat& z, const Mat& z_prev);

// Rows drawn i.i.d. from N(0, cov), row i from rng.derive(tag, i).
Mat gaussian_rows(Index n, const Mat& cov, const Stream& rng, std::string_view tag);

}  // namespace mlmv
