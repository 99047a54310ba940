#include "mlmatvamp/denoisers.hpp"

#include <cmath>
#include <limits>

namespace mlmv {

JacobianReport jacobian_check(const DenoiserCall& call, const Mat& at, const FdProbe& probe) {
  const Index n = at.rows();
  const Index d = at.cols();
  JacobianReport rep;
  const auto base = call(at);
  rep.analytic = base.second;
  if (base.first.rows() != n)
    throw Error(ErrorKind::invalid_dimension, "jacobian_check: output rows must match input rows");
  const Index k = base.first.cols();
  const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * probe.scale;
  rep.numeric = Mat::Zero(d, k);
  for (Index a = 0; a < d; ++a) {
    if (probe.row_separable) {
      Mat up = at, down = at;
      up.col(a).array() += h;
      down.col(a).array() -= h;
      const Mat diff = call(up).first - call(down).first;
      rep.numeric.row(a) = diff.colwise().sum() / (2.0 * h * static_cast<double>(n));
      continue;
    }
    for (Index i = 0; i < n; ++i) {
      Mat up = at, down = at;
      up(i, a) += h;
      down(i, a) -= h;
      const RowVec diff = call(up).first.row(i) - call(down).first.row(i);
      rep.numeric.row(a) += diff / (2.0 * h * static_cast<double>(n));
    }
  }
  if (rep.analytic.rows() != d || rep.analytic.cols() != k)
    throw Error(ErrorKind::invalid_dimension, "jacobian_check: analytic jacobian shape");
  rep.max_abs_dev = (rep.analytic - rep.numeric).cwiseAbs().maxCoeff();
  rep.pass = rep.max_abs_dev <= probe.tol;
  return rep;
}

}  // namespace mlmv
