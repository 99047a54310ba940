#pragma once

// Exact posterior mean of (Z_0, Z_1) for the two-layer linear-Gaussian chain
//   Z_0 rows ~ N(mu, C0),  Z_1 = W Z_0 + B + Xi_1 (row precision P1),  Y = Z_1 + Xi_2 (row covariance S2)
// by one dense solve over all n0*d + n1*d unknowns. Row-major vectorization.

#include <Eigen/Dense>

#include <utility>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Vec vec_rows(const Mat& m) {
  Vec v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) v.segment(i * m.cols(), m.cols()) = m.row(i).transpose();
  return v;
}

inline Mat unvec_rows(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = v.segment(i * cols, cols).transpose();
  return m;
}

inline std::pair<Mat, Mat> linear_gaussian_posterior(const Eigen::RowVectorXd& mu, const Mat& c0, const Mat& w,
                                                     const Mat& b, const Mat& p1, const Mat& s2, const Mat& y) {
  const Eigen::Index d = c0.rows();
  const Eigen::Index n0 = w.cols();
  const Eigen::Index n1 = w.rows();
  const Eigen::Index m0 = n0 * d;
  const Eigen::Index dim = m0 + n1 * d;
  const Mat c0i = c0.inverse();
  const Mat s2i = s2.inverse();
  Mat h = Mat::Zero(dim, dim);
  Vec rhs = Vec::Zero(dim);
  h.topLeftCorner(m0, m0) = kron(Mat::Identity(n0, n0), c0i) + kron(w.transpose() * w, p1);
  h.bottomRightCorner(n1 * d, n1 * d) = kron(Mat::Identity(n1, n1), p1 + s2i);
  h.bottomLeftCorner(n1 * d, m0) = -kron(w, p1);
  h.topRightCorner(m0, n1 * d) = h.bottomLeftCorner(n1 * d, m0).transpose();
  rhs.head(m0) = vec_rows(Mat::Ones(n0, 1) * mu * c0i) - vec_rows(w.transpose() * b * p1);
  rhs.tail(n1 * d) = vec_rows(b * p1) + vec_rows(y * s2i);
  const Vec sol = h.llt().solve(rhs);
  return {unvec_rows(sol.head(m0), n0, d), unvec_rows(sol.tail(n1 * d), n1, d)};
}

// Joint minimizer over (U, X) of ||X - W U - B||^2_N + ||X - Rm||^2_Gm + ||U - Rp||^2_Gp
// (row-wise weighted norms) by the dense normal equations. Returns (U, X).
inline std::pair<Mat, Mat> linear_layer_normal_equations(const Mat& w, const Mat& b, const Mat& n, const Mat& gm,
                                                         const Mat& gp, const Mat& rm, const Mat& rp) {
  const Eigen::Index d = n.rows();
  const Eigen::Index n_in = w.cols();
  const Eigen::Index n_out = w.rows();
  const Eigen::Index mu = n_in * d;
  const Eigen::Index dim = mu + n_out * d;
  Mat h = Mat::Zero(dim, dim);
  h.topLeftCorner(mu, mu) = kron(w.transpose() * w, n) + kron(Mat::Identity(n_in, n_in), gp);
  h.bottomRightCorner(n_out * d, n_out * d) = kron(Mat::Identity(n_out, n_out), n + gm);
  h.bottomLeftCorner(n_out * d, mu) = -kron(w, n);
  h.topRightCorner(mu, n_out * d) = h.bottomLeftCorner(n_out * d, mu).transpose();
  Vec rhs(dim);
  rhs.head(mu) = vec_rows(rp * gp) - vec_rows(w.transpose() * b * n);
  rhs.tail(n_out * d) = vec_rows(b * n) + vec_rows(rm * gm);
  const Vec sol = h.ldlt().solve(rhs);
  return {unvec_rows(sol.head(mu), n_in, d), unvec_rows(sol.tail(n_out * d), n_out, d)};
}

}  // namespace oracle
