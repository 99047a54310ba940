#include "mlmatvamp/denoisers.hpp"
#include "mlmatvamp/linalg.hpp"

#include <algorithm>

namespace mlmv {

namespace {

void check_precision(const Mat& g, Index d, const char* what) {
  if (g.rows() != d || g.cols() != d)
    throw Error(ErrorKind::invalid_dimension, std::string(what) + " must be " + std::to_string(d) + "x" +
                                                  std::to_string(d));
}

}  // namespace

LinearRowsResult linear_rows(const Vec& s, const Mat& b, const Mat& r_minus, const Mat& r_plus,
                             const std::optional<Mat>& noise_prec, const Mat& gamma_minus, const Mat& gamma_plus,
                             Index plus_rows, Index minus_rows) {
  const Index rows = s.size();
  const Index d = gamma_minus.rows();
  if (b.rows() != rows || r_minus.rows() != rows || r_plus.rows() != rows)
    throw Error(ErrorKind::invalid_dimension, "linear_rows: row counts differ");
  if (plus_rows < 1 || minus_rows < 1 || plus_rows > rows || minus_rows > rows)
    throw Error(ErrorKind::invalid_dimension, "linear_rows: averaging ranges out of bounds");
  check_precision(gamma_plus, d, "gamma_plus");

  LinearRowsResult out;
  out.x.resize(rows, d);
  out.u.resize(rows, d);
  Mat jac_plus = Mat::Zero(d, d);
  Mat jac_minus = Mat::Zero(d, d);

  if (!noise_prec) {
    // x = s u + b exactly; u minimizes |s u + b - r-|^2_G- + |u - r+|^2_G+.
    for (Index n = 0; n < rows; ++n) {
      const double sn = s(n);
      const Mat p = sn * sn * gamma_minus + gamma_plus;
      Eigen::LDLT<Mat> ldlt(p);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
        throw Error(ErrorKind::numerical, "linear denoiser: singular system at row " + std::to_string(n));
      const Mat p_inv = ldlt.solve(Mat::Identity(d, d));
      const RowVec rhs = sn * (r_minus.row(n) - b.row(n)) * gamma_minus + r_plus.row(n) * gamma_plus;
      out.u.row(n) = rhs * p_inv;
      out.x.row(n) = sn * out.u.row(n) + b.row(n);
      if (n < plus_rows) jac_plus += sn * sn * gamma_minus * p_inv;
      if (n < minus_rows) jac_minus += gamma_plus * p_inv;
    }
  } else {
    const Mat& nprec = *noise_prec;
    check_precision(nprec, d, "noise precision");
    Mat a(2 * d, 2 * d);
    RowVec rhs(2 * d);
    for (Index n = 0; n < rows; ++n) {
      const double sn = s(n);
      a.topLeftCorner(d, d) = nprec + gamma_minus;
      a.topRightCorner(d, d) = -sn * nprec;
      a.bottomLeftCorner(d, d) = -sn * nprec;
      a.bottomRightCorner(d, d) = sn * sn * nprec + gamma_plus;
      Eigen::LDLT<Mat> ldlt(a);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
        throw Error(ErrorKind::numerical, "linear denoiser: singular system at row " + std::to_string(n));
      const Mat a_inv = ldlt.solve(Mat::Identity(2 * d, 2 * d));
      const RowVec bn = b.row(n) * nprec;
      rhs.head(d) = bn + r_minus.row(n) * gamma_minus;
      rhs.tail(d) = -sn * bn + r_plus.row(n) * gamma_plus;
      const RowVec v = rhs * a_inv;
      out.x.row(n) = v.head(d);
      out.u.row(n) = v.tail(d);
      if (n < plus_rows) jac_plus += gamma_minus * a_inv.topLeftCorner(d, d);
      if (n < minus_rows) jac_minus += gamma_plus * a_inv.bottomRightCorner(d, d);
    }
  }
  out.jac_plus = jac_plus / static_cast<double>(plus_rows);
  out.jac_minus = jac_minus / static_cast<double>(minus_rows);
  return out;
}

DenoiserResult linear_denoise(const LinearLayer& layer, const Mat& r_minus, const Mat& r_plus_prev,
                              const PrecisionBundle& prec) {
  const Index n_out = layer.n_out();
  const Index n_in = layer.n_in();
  const Index d = layer.d();
  if (r_minus.rows() != n_out || r_minus.cols() != d || r_plus_prev.rows() != n_in || r_plus_prev.cols() != d)
    throw Error(ErrorKind::invalid_dimension, "linear_denoise: message shapes do not match the layer");
  check_precision(prec.gamma_minus, d, "gamma_minus");
  check_precision(prec.gamma_plus_prev, d, "gamma_plus_prev");

  const Index rows = std::max(n_out, n_in);
  const auto& f = layer.svd;
  Mat rm = Mat::Zero(rows, d);
  Mat rp = Mat::Zero(rows, d);
  Mat bt = Mat::Zero(rows, d);
  rm.topRows(n_out) = f.v_out.transpose() * r_minus;
  rp.topRows(n_in) = f.v_in * r_plus_prev;
  bt.topRows(n_out) = layer.b_rotated;
  const Vec s = f.padded(rows);

  const LinearRowsResult sol =
      linear_rows(s, bt, rm, rp, layer.noise_prec, prec.gamma_minus, prec.gamma_plus_prev, n_out, n_in);
  DenoiserResult out;
  out.zhat_plus = f.v_out * sol.x.topRows(n_out);
  out.zhat_minus = f.v_in.transpose() * sol.u.topRows(n_in);
  out.jac_plus = sol.jac_plus;
  out.jac_minus = sol.jac_minus;
  return out;
}

}  // namespace mlmv
