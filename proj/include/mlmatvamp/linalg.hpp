#pragma once

#include "mlmatvamp/core.hpp"
#include "mlmatvamp/rng.hpp"

#include <algorithm>
#include <cmath>

namespace mlmv {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Standard normal entries, filled row by row so a prefix of rows is stable in n.
template <class Scalar = double>
MatrixX<Scalar> gaussian_matrix(Index rows, Index cols, Stream& rng) {
  MatrixX<Scalar> g(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) g(i, j) = static_cast<Scalar>(rng.normal());
  return g;
}

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix, columns of Q
// multiplied by the sign of the matching diagonal entry of R.
template <class Scalar = double>
MatrixX<Scalar> sample_haar_orthogonal(Index n, Stream& rng) {
  if (n <= 0) throw Error(ErrorKind::invalid_dimension, "sample_haar_orthogonal: n must be >= 1");
  const MatrixX<Scalar> g = gaussian_matrix<Scalar>(n, n, rng);
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(g);
  MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(n, n);
  const auto& r = qr.matrixQR();
  for (Index j = 0; j < n; ++j)
    if (r(j, j) < Scalar(0)) q.col(j) = -q.col(j);
  return q;
}

// W = v_out * diag(singular) * v_in with v_out (n_out x n_out) and v_in (n_in x n_in)
// both orthogonal; diag is the n_out x n_in rectangular diagonal.
template <class Scalar = double>
struct SvdFactors {
  MatrixX<Scalar> v_out;
  VectorX<Scalar> singular;
  MatrixX<Scalar> v_in;
  Index n_out = 0;
  Index n_in = 0;

  Index rank_dim() const { return std::min(n_out, n_in); }

  // Singular values zero-padded to the requested logical length.
  VectorX<Scalar> padded(Index length) const {
    VectorX<Scalar> s = VectorX<Scalar>::Zero(length);
    const Index m = std::min(length, singular.size());
    s.head(m) = singular.head(m);
    return s;
  }
  VectorX<Scalar> padded_out() const { return padded(n_out); }
  VectorX<Scalar> padded_in() const { return padded(n_in); }

  MatrixX<Scalar> reconstruct() const {
    const Index m = rank_dim();
    return v_out.leftCols(m) * singular.head(m).asDiagonal() * v_in.topRows(m);
  }
};

namespace detail {

// Tall or square case: QR first so the full left factor comes from Householder
// accumulation and the small SVD acts on the triangular factor.
template <class Scalar>
void svd_tall(const MatrixX<Scalar>& w, MatrixX<Scalar>& left, VectorX<Scalar>& s, MatrixX<Scalar>& right_t) {
  const Index n = w.rows();
  const Index m = w.cols();
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(w);
  MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(n, n);
  const MatrixX<Scalar> r = qr.matrixQR().topRows(m).template triangularView<Eigen::Upper>();
  Eigen::BDCSVD<MatrixX<Scalar>> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.info() != Eigen::Success) throw Error(ErrorKind::numerical, "svd_factor: SVD kernel failed");
  left = q;
  left.leftCols(m) = q.leftCols(m) * svd.matrixU();
  s = svd.singularValues();
  right_t = svd.matrixV().transpose();
}

}  // namespace detail

template <class Derived>
SvdFactors<typename Derived::Scalar> svd_factor(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  if (!w.allFinite()) throw Error(ErrorKind::numerical, "svd_factor: non-finite weight matrix");
  SvdFactors<Scalar> f;
  f.n_out = w.rows();
  f.n_in = w.cols();
  if (f.n_out == 0 || f.n_in == 0) throw Error(ErrorKind::invalid_dimension, "svd_factor: empty matrix");
  if (f.n_out >= f.n_in) {
    detail::svd_tall<Scalar>(w.eval(), f.v_out, f.singular, f.v_in);
  } else {
    // W^T = A S B  =>  W = B^T S A^T.
    MatrixX<Scalar> a, b;
    detail::svd_tall<Scalar>(w.transpose().eval(), a, f.singular, b);
    f.v_out = b.transpose();
    f.v_in = a.transpose();
  }
  return f;
}

template <class Derived>
MatrixX<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

// Symmetrize, then clamp the spectrum into [floor, cap]. Sets *clamped when an
// eigenvalue had to move.
template <class Derived>
MatrixX<typename Derived::Scalar> psd_regularize(const Eigen::MatrixBase<Derived>& m, double floor, double cap,
                                                 bool* clamped = nullptr) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) throw Error(ErrorKind::invalid_dimension, "psd_regularize: matrix not square");
  if (!(floor <= cap)) throw Error(ErrorKind::invalid_config, "psd_regularize: floor exceeds cap");
  if (!m.allFinite()) throw Error(ErrorKind::numerical, "psd_regularize: non-finite matrix");
  const MatrixX<Scalar> sym = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(sym);
  VectorX<Scalar> lambda = eig.eigenvalues();
  bool moved = false;
  for (Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < floor || lambda(i) > cap) {
      lambda(i) = std::clamp<Scalar>(lambda(i), floor, cap);
      moved = true;
    }
  }
  if (clamped) *clamped = moved;
  if (!moved) return sym;
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

// Symmetric square root of a PSD matrix; eigenvalues below -tol reject.
template <class Derived>
MatrixX<typename Derived::Scalar> psd_sqrt(const Eigen::MatrixBase<Derived>& cov, double tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  if (cov.rows() != cov.cols()) throw Error(ErrorKind::invalid_dimension, "psd_sqrt: matrix not square");
  if (!cov.allFinite()) throw Error(ErrorKind::invalid_covariance, "psd_sqrt: non-finite covariance");
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(symmetrize(cov));
  VectorX<Scalar> lambda = eig.eigenvalues();
  const Scalar scale = std::max<Scalar>(Scalar(1), lambda.cwiseAbs().maxCoeff());
  for (Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -tol * scale) throw Error(ErrorKind::invalid_covariance, "covariance has a negative eigenvalue");
    lambda(i) = std::sqrt(std::max<Scalar>(lambda(i), Scalar(0)));
  }
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

// n rows drawn i.i.d. from N(0, cov); singular cov is accepted.
template <class Derived>
MatrixX<typename Derived::Scalar> sample_rows_gaussian(Index n, const Eigen::MatrixBase<Derived>& cov, Stream& rng) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> root = psd_sqrt(cov);
  return gaussian_matrix<Scalar>(n, cov.rows(), rng) * root;
}

// A * B^{-1} for symmetric positive definite B.
template <class DA, class DB>
MatrixX<typename DA::Scalar> solve_right_spd(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DA::Scalar;
  Eigen::LLT<MatrixX<Scalar>> llt(symmetrize(b));
  if (llt.info() != Eigen::Success) {
    Eigen::LDLT<MatrixX<Scalar>> ldlt(symmetrize(b));
    return ldlt.solve(a.transpose()).transpose();
  }
  return llt.solve(a.transpose()).transpose();
}

template <class Derived>
MatrixX<typename Derived::Scalar> spd_inverse(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return solve_right_spd(MatrixX<Scalar>::Identity(m.rows(), m.cols()), m);
}

// Row-averaged second moment (1/n) A^T B with entrywise standard errors.
struct MomentEstimate {
  Mat value;
  Mat std_error;
};

inline MomentEstimate second_moment(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.rows() == 0)
    throw Error(ErrorKind::invalid_dimension, "second_moment: row counts differ or are zero");
  const Index n = a.rows();
  MomentEstimate out;
  out.value = (a.transpose() * b) / static_cast<double>(n);
  out.std_error = Mat::Zero(a.cols(), b.cols());
  for (Index i = 0; i < a.cols(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      const Vec prod = a.col(i).cwiseProduct(b.col(j));
      const double mean = out.value(i, j);
      const double var = (prod.array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(n - 1));
      out.std_error(i, j) = std::sqrt(var / static_cast<double>(n));
    }
  }
  return out;
}

inline MomentEstimate second_moment(const Mat& a) { return second_moment(a, a); }

}  // namespace mlmv
