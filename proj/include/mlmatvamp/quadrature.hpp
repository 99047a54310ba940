#pragma once

#include "mlmatvamp/core.hpp"

#include <cstdint>
#include <memory>

namespace mlmv {

// Gauss-Hermite rule for the standard normal weight: sum_i w_i f(x_i) ~ E f(X).
struct GaussHermiteRule {
  Vec nodes;
  Vec weights;
};

// Golub-Welsch on the probabilists' Hermite Jacobi matrix. Tables are cached and
// shared read-only across threads.
const GaussHermiteRule& gauss_hermite(int order);

struct QuadratureCfg {
  int order = 30;             // Gauss-Hermite points per dimension
  long node_budget = 8000;    // tensor rule capped at the largest order with order^d within this
  int min_order = 5;          // below this order the tensor rule gives way to Monte-Carlo nodes
  long samples = 20000;       // Monte-Carlo node count
  std::uint64_t seed = 0x5EEDu;
  bool exploit_linear = true; // closed forms for linear maps and scalar relu
  int threads = 1;
};

// Standardized integration nodes for N(0, I_d): rows of `points`, weights sum to one.
struct NodeSet {
  Mat points;
  Vec weights;
  bool tensor = true;
};

std::shared_ptr<const NodeSet> standard_nodes(Index d, const QuadratureCfg& cfg);

}  // namespace mlmv
