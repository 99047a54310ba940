#include "mlmatvamp/quadrature.hpp"

#include "mlmatvamp/linalg.hpp"

#include <cmath>
#include <algorithm>
#include <map>
#include <mutex>
#include <tuple>

namespace mlmv {

namespace {

GaussHermiteRule build_rule(int order) {
  Mat jacobi = Mat::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
  GaussHermiteRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = eig.eigenvectors().row(0).transpose().array().square();
  rule.weights /= rule.weights.sum();
  return rule;
}

long int_pow(long base, Index exp, long limit) {
  long r = 1;
  for (Index i = 0; i < exp; ++i) {
    if (r > limit / base) return limit + 1;
    r *= base;
  }
  return r;
}

NodeSet tensor_nodes(Index d, int order) {
  const GaussHermiteRule& rule = gauss_hermite(order);
  long count = 1;
  for (Index i = 0; i < d; ++i) count *= order;
  NodeSet set;
  set.points.resize(count, d);
  set.weights.resize(count);
  for (long p = 0; p < count; ++p) {
    long rest = p;
    double w = 1.0;
    for (Index j = 0; j < d; ++j) {
      const int idx = static_cast<int>(rest % order);
      rest /= order;
      set.points(p, j) = rule.nodes(idx);
      w *= rule.weights(idx);
    }
    set.weights(p) = w;
  }
  set.tensor = true;
  return set;
}

// Gaussian draws affinely corrected so their sample mean is zero and sample
// second moment is exactly the identity.
NodeSet mc_nodes(Index d, long samples, std::uint64_t seed) {
  Stream rng(seed);
  Stream s = rng.derive("quadrature-mc", static_cast<std::uint64_t>(d));
  Mat x = gaussian_matrix(samples, d, s);
  x.rowwise() -= x.colwise().mean();
  const Mat m2 = (x.transpose() * x) / static_cast<double>(samples);
  const Eigen::LLT<Mat> llt(m2);
  const Mat l = llt.matrixL();
  x = l.triangularView<Eigen::Lower>().solve(x.transpose()).transpose();
  NodeSet set;
  set.points = x;
  set.weights = Vec::Constant(samples, 1.0 / static_cast<double>(samples));
  set.tensor = false;
  return set;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int order) {
  if (order < 1) throw Error(ErrorKind::invalid_config, "Gauss-Hermite order must be >= 1");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, std::make_unique<GaussHermiteRule>(build_rule(order))).first;
  return *it->second;
}

std::shared_ptr<const NodeSet> standard_nodes(Index d, const QuadratureCfg& cfg) {
  if (d < 1) throw Error(ErrorKind::invalid_dimension, "quadrature dimension must be >= 1");
  int order = cfg.order;
  while (order > 1 && int_pow(order, d, cfg.node_budget) > cfg.node_budget) --order;
  const bool use_tensor = order >= std::min(cfg.min_order, cfg.order) &&
                          int_pow(order, d, cfg.node_budget) <= cfg.node_budget;
  using Key = std::tuple<Index, bool, long, std::uint64_t>;
  const Key key{d, use_tensor, use_tensor ? order : cfg.samples, use_tensor ? 0 : cfg.seed};
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const NodeSet>> cache;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  if (!use_tensor && cfg.samples < d + 1)
    throw Error(ErrorKind::invalid_config, "Monte-Carlo quadrature needs more samples than dimensions");
  auto set = std::make_shared<const NodeSet>(use_tensor ? tensor_nodes(d, order) : mc_nodes(d, cfg.samples, cfg.seed));
  std::lock_guard<std::mutex> lock(mu);
  return cache.emplace(key, set).first->second;
}

}  // namespace mlmv
