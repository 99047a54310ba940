#include "mlmatvamp/applications.hpp"
#include "mlmatvamp/model.hpp"
#include "mlmatvamp/model_io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace mlmv;

namespace {

NetworkModel small_model(Index n0, Index n1, Index d, const Activation& act, double noise_var, std::uint64_t seed) {
  Stream rng(seed);
  NetworkModel m;
  m.d = d;
  m.n0 = n0;
  m.prior = InputPrior::gaussian(Mat::Identity(d, d));
  const Mat w = gaussian_matrix<double>(n1, n0, rng) / std::sqrt(static_cast<double>(n0));
  const Mat b = 0.2 * gaussian_matrix<double>(n1, d, rng);
  m.layers.push_back(LinearLayer::make(w, b, Mat(4.0 * Mat::Identity(d, d))));
  m.layers.push_back(NonlinearLayer::additive(act, noise_var * Mat::Identity(d, d)));
  return m;
}

}  // namespace

TEST_CASE("noiseless two-layer identity chain composes exactly") {
  Stream rng(1);
  const Index n0 = 8, n1 = 6, d = 2;
  NetworkModel m;
  m.d = d;
  m.n0 = n0;
  m.prior = InputPrior::gaussian(Mat::Identity(d, d));
  const Mat w = gaussian_matrix<double>(n1, n0, rng);
  const Mat b = gaussian_matrix<double>(n1, d, rng);
  m.layers.push_back(LinearLayer::make(w, b, std::nullopt));
  m.layers.push_back(NonlinearLayer::additive(Activation::identity(), Mat::Zero(d, d)));
  m.validate();
  const SignalStack s = generate_signals(m, Stream(2));
  CHECK((s.z[2] - (w * s.z[0] + b)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(replay_residual(m, s) <= 1e-12);
}

TEST_CASE("relu layer applies elementwise") {
  const NonlinearLayer layer = NonlinearLayer::additive(Activation::relu(), Mat::Zero(2, 2));
  Mat u(1, 2);
  u << -1.0, 2.0;
  const Mat z = layer.apply(u, Mat::Zero(1, 2));
  CHECK(z(0, 0) == 0.0);
  CHECK(z(0, 1) == 2.0);
}

TEST_CASE("generated signals replay for every layer kind") {
  for (const Activation& act : {Activation::identity(), Activation::relu(), Activation::sigmoid(), Activation::tanh()}) {
    const NetworkModel m = small_model(30, 40, 3, act, 0.1, 5);
    const SignalStack s = generate_signals(m, Stream(6));
    CHECK(s.z.size() == 3);
    CHECK(replay_residual(m, s) <= 1e-12);
  }
  const TwoLayerProblem p = build_two_layer(50, 20, 3, "sigmoid", 10.0, 7);
  CHECK(replay_residual(p.model, p.signals) <= 1e-12);
  const Mat expected = (1.0 / (1.0 + (-p.signals.z[1].array()).exp())).matrix() * p.f2 + p.signals.xi[2];
  CHECK((p.y() - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("layer transition log densities") {
  const NonlinearLayer id = NonlinearLayer::additive(Activation::identity(), Mat::Identity(2, 2));
  RowVec z(2), u(2);
  z << 0.3, -0.4;
  const double at_mode = log_transition(id, z, z);
  const NonlinearLayer id1 = NonlinearLayer::additive(Activation::identity(), Mat::Identity(1, 1));
  RowVec a(1), b(1);
  a << 2.0;
  b << 0.0;
  const double base = log_transition(id1, b, b);
  CHECK(std::abs(log_transition(id1, a, b) - base + 2.0) <= 1e-12);
  u << 0.1, 0.2;
  CHECK(log_transition(id, z, u) < at_mode);

  // Sigmoid with Sigma = 0.1 I against the Gaussian density, up to the shared constant.
  const NonlinearLayer sg = NonlinearLayer::additive(Activation::sigmoid(), 0.1 * Mat::Identity(2, 2));
  Stream rng(8);
  double offset = 0.0;
  for (int i = 0; i < 5; ++i) {
    const RowVec zi = gaussian_matrix<double>(1, 2, rng);
    const RowVec ui = gaussian_matrix<double>(1, 2, rng);
    const RowVec e = zi - (1.0 / (1.0 + (-ui.array()).exp())).matrix();
    const double direct = -0.5 * e.squaredNorm() / 0.1;
    const double diff = log_transition(sg, zi, ui) - direct;
    if (i == 0) offset = diff;
    CHECK(std::abs(diff - offset) <= 1e-10);
  }
}

TEST_CASE("model validation rejects broken chains") {
  NetworkModel m = small_model(10, 12, 2, Activation::relu(), 0.1, 9);
  m.validate();
  NetworkModel odd = m;
  odd.layers.pop_back();
  CHECK_THROWS_AS(odd.validate(), Error);
  NetworkModel swapped = m;
  std::swap(swapped.layers[0], swapped.layers[1]);
  CHECK_THROWS_AS(swapped.validate(), Error);
  NetworkModel wrong_n0 = m;
  wrong_n0.n0 = 11;
  CHECK_THROWS_AS(wrong_n0.validate(), Error);
  CHECK_THROWS_AS(LinearLayer::make(Mat::Identity(3, 3), Mat::Zero(3, 2), Mat(-Mat::Identity(2, 2))), Error);
}

TEST_CASE("model JSON round-trips losslessly") {
  NetworkModel m = small_model(7, 9, 2, Activation::softplus(0.3), 0.05, 10);
  Mat mean_cov(2, 2);
  mean_cov << 1.0, 0.25, 0.25, 0.5;
  m.prior = InputPrior::mixture({0.3, 0.7}, {RowVec::Zero(2), RowVec::Constant(2, 0.1 / 3.0)},
                                {mean_cov, Mat::Identity(2, 2)});
  m.layers.push_back(LinearLayer::make(Mat::Identity(9, 9) * (1.0 / 7.0), Mat::Zero(9, 2), std::nullopt));
  m.layers.push_back(NonlinearLayer::linear_mixture({Mat::Identity(2, 1), Mat::Ones(2, 1)}, {0.25, 0.75},
                                                    Mat::Constant(1, 1, 0.01)));
  m.validate();
  const Json j = model_to_json(m);
  CHECK(j.at("schema") == 1);
  const NetworkModel back = model_from_json(Json::parse(j.dump()));
  CHECK(model_to_json(back) == j);

  const SignalStack a = generate_signals(m, Stream(11));
  const SignalStack b = generate_signals(back, Stream(11));
  for (std::size_t ell = 0; ell < a.z.size(); ++ell) CHECK(a.z[ell] == b.z[ell]);

  const auto path = std::filesystem::temp_directory_path() / "mlmatvamp_unit_model.json";
  save_model(m, path.string());
  CHECK(model_to_json(load_model(path.string())) == j);
  std::filesystem::remove(path);
}

TEST_CASE("model JSON rejects a wrong schema and code-defined layers") {
  const NetworkModel m = small_model(5, 6, 1, Activation::tanh(), 0.1, 12);
  Json j = model_to_json(m);
  j["schema"] = 2;
  CHECK_THROWS_AS(model_from_json(j), Error);
  NetworkModel custom = m;
  custom.layers[1] = NonlinearLayer::additive(
      Activation::custom("cube", [](double x) { return x * x * x; }, [](double x) { return 3 * x * x; },
                         [](double x) { return 6 * x; }),
      Mat::Identity(1, 1));
  CHECK_THROWS_AS(model_to_json(custom), Error);
}

TEST_CASE("activations agree with their finite differences away from kinks") {
  Stream rng(13);
  const Arr x = 2.0 * gaussian_matrix<double>(50, 1, rng).array() + 0.01;
  for (const Activation& act : {Activation::identity(), Activation::relu(), Activation::sigmoid(),
                                Activation::tanh(), Activation::softplus(0.5)}) {
    const double h = 1e-6;
    const Arr fd = (act.value(x + h) - act.value(x - h)) / (2.0 * h);
    CHECK((fd - act.first(x)).abs().maxCoeff() <= 1e-6);
    const Arr fd2 = (act.first(x + h) - act.first(x - h)) / (2.0 * h);
    CHECK((fd2 - act.second(x)).abs().maxCoeff() <= 1e-5);
  }
  CHECK(Activation::from_name("softplus:0.25").width() == 0.25);
  CHECK_THROWS_AS(Activation::from_name("swish"), Error);
}
