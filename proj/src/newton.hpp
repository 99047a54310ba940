#pragma once

#include "mlmatvamp/denoisers.hpp"

#include <functional>
#include <vector>

namespace mlmv::detail {

// f(x), and when requested its gradient and Hessian.
using Objective = std::function<double(const Vec& x, Vec* grad, Mat* hess)>;

struct NewtonOutcome {
  Vec x;
  Mat hessian;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton with a Levenberg shift on indefinite Hessians and Armijo backtracking.
NewtonOutcome newton_minimize(const Objective& f, Vec x0, const NewtonCfg& cfg);

// Sum over components of exp(-(1/2) u H_c u^T - l_c u^T - c_c), as -log of the sum.
struct QuadraticMixture {
  std::vector<Mat> h;
  std::vector<RowVec> l;
  std::vector<double> c;

  double eval(const RowVec& u, Vec* grad, Mat* hess) const;
};

}  // namespace mlmv::detail
