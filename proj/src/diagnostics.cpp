#include "mlmatvamp/diagnostics.hpp"

#include "mlmatvamp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace mlmv {

namespace {

constexpr std::uint64_t kCompletionSeed = 0xC0313;

Mat hcat(const Mat& a, const Mat& b) {
  Mat out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

// Worst entrywise |a - b| / sqrt(se_a^2 + se_b^2) over the upper triangle of
// symmetric estimates.
double max_z(const MomentEstimate& a, const MomentEstimate& b) {
  if (a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
    throw Error(ErrorKind::invalid_pairing, "moment shapes differ");
  double worst = 0.0;
  for (Index i = 0; i < a.value.rows(); ++i) {
    for (Index j = i; j < a.value.cols(); ++j) {
      const double diff = std::abs(a.value(i, j) - b.value(i, j));
      const double se = std::hypot(a.std_error(i, j), b.std_error(i, j));
      const double z = se > 0.0 ? diff / se : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      worst = std::max(worst, z);
    }
  }
  return worst;
}

double gaussian_w2(const Mat& a, const Mat& b) {
  const RowVec ma = a.colwise().mean();
  const RowVec mb = b.colwise().mean();
  const Mat ca = symmetrize(Mat((a.rowwise() - ma).transpose() * (a.rowwise() - ma) / static_cast<double>(a.rows())));
  const Mat cb = symmetrize(Mat((b.rowwise() - mb).transpose() * (b.rowwise() - mb) / static_cast<double>(b.rows())));
  const Mat ra = psd_sqrt(ca);
  const Mat cross = psd_sqrt(symmetrize(Mat(ra * cb * ra)));
  const double w2 = (ma - mb).squaredNorm() + (ca + cb - 2.0 * cross).trace();
  return std::sqrt(std::max(0.0, w2));
}

double quantile_w2(const Mat& a, const Mat& b) {
  std::vector<double> x(a.col(0).data(), a.col(0).data() + a.rows());
  std::vector<double> y(b.col(0).data(), b.col(0).data() + b.rows());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  // Couple the empirical quantile functions on the merged grid of jump points.
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double t = 0.0, total = 0.0;
  while (i < x.size() && j < y.size()) {
    const double next = std::min((i + 1) / nx, (j + 1) / ny);
    total += (next - t) * (x[i] - y[j]) * (x[i] - y[j]);
    t = next;
    if ((i + 1) / nx <= next) ++i;
    if ((j + 1) / ny <= next) ++j;
  }
  return std::sqrt(total);
}

// Applies a Haar-distributed rotation to the rows of e: Q^T e has the law of
// S (polar factor of e's column space), S uniform on the Stiefel manifold.
Mat haar_rotate_rows(const Mat& e, const Stream& rng) {
  const Index m = e.rows();
  const Index d = e.cols();
  if (m <= d) return e;
  Eigen::JacobiSVD<Mat> svd(e, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Stream s = rng;
  const Mat g = gaussian_matrix<double>(m, d, s);
  const Mat frame = solve_right_spd(g, psd_sqrt(Mat(g.transpose() * g)));
  return frame * svd.singularValues().asDiagonal() * svd.matrixV().transpose();
}

// Rows beyond the rank of an odd layer are rotated by the stored output basis,
// whose null-space block is an arbitrary completion. The algorithm does not
// depend on that block, so it is replaced by a Haar completion as in the
// rotationally invariant weight model.
Mat rotate_output_side(const LinearLayer& lay, const Mat& e, const Stream& rng) {
  Mat out = lay.svd.v_out.transpose() * e;
  const Index r = std::min(lay.n_out(), lay.n_in());
  const Index rest = lay.n_out() - r;
  if (rest > 0) out.bottomRows(rest) = haar_rotate_rows(out.bottomRows(rest), rng);
  return out;
}

}  // namespace

TransformedErrors compute_transformed_errors(const VampTrace& trace, const SignalStack& signals,
                                             const NetworkModel& model) {
  const int L = model.num_layers();
  if (trace.num_layers != L || static_cast<int>(signals.z.size()) != L + 1)
    throw Error(ErrorKind::invalid_pairing, "trace, signals and model differ in depth");
  if (trace.snapshots.empty()) throw Error(ErrorKind::invalid_pairing, "trace holds no snapshots");
  TransformedErrors out;
  out.num_layers = L;
  for (const VampState& st : trace.snapshots) {
    if (static_cast<int>(st.r_minus.size()) != L) throw Error(ErrorKind::invalid_pairing, "snapshot depth differs");
    std::vector<CellErrors> row(L);
    std::vector<Mat> unrotated_pair(L);
    for (int ell = 0; ell < L; ++ell) {
      const Mat& z = signals.z[ell];
      if (st.r_minus[ell].rows() != z.rows() || st.r_minus[ell].cols() != z.cols())
        throw Error(ErrorKind::invalid_pairing, "message and signal shapes differ at layer " + std::to_string(ell));
      CellErrors& c = row[ell];
      c.k = static_cast<int>(&st - trace.snapshots.data());
      c.ell = ell;
      const Mat q = st.r_minus[ell] - z;
      const Mat p = st.r_plus[ell] - z;
      if (ell % 2 == 1) {
        const Stream completion = Stream(kCompletionSeed).derive("completion", c.k, ell);
        c.q_minus = rotate_output_side(model.linear(ell), q, completion.derive("minus"));
        // Second moments are rotation invariant; the output-side basis makes the
        // rows exchangeable so row-sampling standard errors apply.
        c.plus_pair = rotate_output_side(model.linear(ell), hcat(z, p), completion.derive("plus"));
        unrotated_pair[ell] = hcat(z, p);
      } else {
        c.q_minus = q;
        const Mat& v = model.linear(ell + 1).svd.v_in;
        c.plus_pair = hcat(v * z, v * p);
      }
    }
    for (int ell = 0; ell < L; ++ell) {
      CellErrors& c = row[ell];
      if (ell == 0) {
        c.prev = signals.z[0];
        c.w = Mat(c.q_minus.rows(), 0);
      } else if (ell % 2 == 1) {
        const LinearLayer& lay = model.linear(ell);
        const Index r = std::min(lay.n_out(), lay.n_in());
        c.prev = row[ell - 1].plus_pair.topRows(r);
        const Mat s = lay.svd.padded(r);
        const Mat b_bar = lay.b_rotated.topRows(r);
        if (lay.noiseless()) {
          c.w = hcat(s, b_bar);
        } else {
          const Mat xi = (lay.svd.v_out.transpose() * signals.xi[ell]).topRows(r);
          c.w = hcat(hcat(s, b_bar), xi);
        }
      } else {
        c.prev = unrotated_pair[ell - 1];
        c.w = signals.xi[ell];
      }
    }
    out.cells.push_back(std::move(row));
  }
  return out;
}

Vec excess_kurtosis(const Mat& x) {
  Vec out(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double m2 = x.col(j).squaredNorm() / static_cast<double>(x.rows());
    const double m4 = x.col(j).array().pow(4).mean();
    out(j) = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
  }
  return out;
}

double max_standardized_cross_moment(const Mat& x, const Mat& y) {
  if (x.rows() < y.rows()) throw Error(ErrorKind::invalid_pairing, "cross moment needs at least as many rows in x");
  if (y.cols() == 0 || y.rows() < 2) return 0.0;
  const MomentEstimate m = second_moment(x.topRows(y.rows()), y);
  double worst = 0.0;
  for (Index i = 0; i < m.value.rows(); ++i)
    for (Index j = 0; j < m.value.cols(); ++j)
      if (m.std_error(i, j) > 0.0) worst = std::max(worst, std::abs(m.value(i, j)) / m.std_error(i, j));
  return worst;
}

CellReport check_cell(const CellErrors& c, const MomentEstimate& tau_minus, const MomentEstimate& k_plus,
                      const GaussianityOptions& opt) {
  CellReport r;
  r.k = c.k;
  r.ell = c.ell;
  r.tau_max_z = max_z(second_moment(c.q_minus), tau_minus);
  r.kplus_max_z = max_z(second_moment(c.plus_pair), k_plus);
  r.prev_max_z = max_standardized_cross_moment(c.q_minus, c.prev);
  r.w_max_z = max_standardized_cross_moment(c.q_minus, c.w);
  r.excess_kurtosis = excess_kurtosis(c.q_minus);
  r.band = opt.band;
  r.kurtosis_limit = opt.kurtosis_band * std::sqrt(24.0 / static_cast<double>(c.q_minus.rows()));
  r.covariance_pass = r.tau_max_z <= opt.band && r.kplus_max_z <= opt.band;
  r.independence_pass = r.prev_max_z <= opt.band && r.w_max_z <= opt.band;
  r.kurtosis_pass = r.excess_kurtosis.cwiseAbs().maxCoeff() <= r.kurtosis_limit;
  return r;
}

GaussianityReport gaussianity_report(const TransformedErrors& errs, const SeHistory& se, int max_k,
                                     const GaussianityOptions& opt) {
  if (errs.num_layers != se.num_layers) throw Error(ErrorKind::invalid_pairing, "errors and state evolution differ in depth");
  GaussianityReport rep;
  const int kmax = std::min({max_k, static_cast<int>(errs.cells.size()) - 1, static_cast<int>(se.cells.size()) - 1});
  for (int k = 0; k <= kmax; ++k)
    for (int ell = 0; ell < errs.num_layers; ++ell) {
      const SeCell& s = se.cell(k, ell);
      rep.cells.push_back(check_cell(errs.cells[k][ell], s.tau_minus, s.k_plus, opt));
    }
  if (rep.cells.empty()) return rep;
  double all = 0, cov = 0, ind = 0, kurt = 0;
  for (const CellReport& c : rep.cells) {
    all += c.pass();
    cov += c.covariance_pass;
    ind += c.independence_pass;
    kurt += c.kurtosis_pass;
  }
  const double n = static_cast<double>(rep.cells.size());
  rep.pass_rate = all / n;
  rep.covariance_pass_rate = cov / n;
  rep.independence_pass_rate = ind / n;
  rep.kurtosis_pass_rate = kurt / n;
  return rep;
}

W2Proxy wasserstein2_proxy(const Mat& a, const Mat& b, bool moments_only, int batches) {
  if (a.rows() < 100 || b.rows() < 100) throw Error(ErrorKind::invalid_config, "W2 proxy needs at least 100 rows");
  if (a.cols() != b.cols()) throw Error(ErrorKind::invalid_dimension, "W2 proxy: column counts differ");
  if (!moments_only && a.cols() != 1)
    throw Error(ErrorKind::unsupported, "exact W2 by quantile coupling is implemented for d = 1 only");
  if (batches < 2) throw Error(ErrorKind::invalid_config, "W2 proxy needs at least two batches");
  auto eval = [&](const Mat& x, const Mat& y) { return moments_only ? gaussian_w2(x, y) : quantile_w2(x, y); };
  W2Proxy out;
  out.value = eval(a, b);
  const Index ba = a.rows() / batches;
  const Index bb = b.rows() / batches;
  Vec v(batches);
  for (int i = 0; i < batches; ++i) v(i) = eval(a.middleRows(i * ba, ba), b.middleRows(i * bb, bb));
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / (batches - 1);
  out.std_error = std::sqrt(var / batches);
  return out;
}

Json report_to_json(const GaussianityReport& r) {
  Json cells = Json::array();
  for (const CellReport& c : r.cells) {
    std::vector<double> kurt(c.excess_kurtosis.data(), c.excess_kurtosis.data() + c.excess_kurtosis.size());
    cells.push_back(Json{{"k", c.k},
                         {"layer", c.ell},
                         {"tau_max_z", c.tau_max_z},
                         {"kplus_max_z", c.kplus_max_z},
                         {"prev_max_z", c.prev_max_z},
                         {"w_max_z", c.w_max_z},
                         {"excess_kurtosis", kurt},
                         {"kurtosis_limit", c.kurtosis_limit},
                         {"covariance_pass", c.covariance_pass},
                         {"independence_pass", c.independence_pass},
                         {"kurtosis_pass", c.kurtosis_pass}});
  }
  return Json{{"pass_rate", r.pass_rate},
              {"covariance_pass_rate", r.covariance_pass_rate},
              {"independence_pass_rate", r.independence_pass_rate},
              {"kurtosis_pass_rate", r.kurtosis_pass_rate},
              {"cells", cells}};
}

std::string report_table(const GaussianityReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "   k  layer   tau_z  kplus_z  prev_z     w_z  max|kurt|  limit  verdict\n";
  for (const CellReport& c : r.cells) {
    os << std::setw(4) << c.k << std::setw(7) << c.ell << std::setw(8) << c.tau_max_z << std::setw(9) << c.kplus_max_z
       << std::setw(8) << c.prev_max_z << std::setw(8) << c.w_max_z << std::setw(11)
       << c.excess_kurtosis.cwiseAbs().maxCoeff() << std::setw(7) << c.kurtosis_limit << "  "
       << (c.pass() ? "pass" : "FAIL") << '\n';
  }
  os << "pass rate " << r.pass_rate << " (covariance " << r.covariance_pass_rate << ", independence "
     << r.independence_pass_rate << ", kurtosis " << r.kurtosis_pass_rate << ")\n";
  return os.str();
}

void write_report_csv(const GaussianityReport& r, const std::string& path, const Provenance& prov) {
  CsvWriter csv(path, prov, {"k", "layer", "check", "value", "limit", "pass"});
  for (const CellReport& c : r.cells) {
    const std::pair<const char*, double> z_checks[] = {
        {"tau_max_z", c.tau_max_z}, {"kplus_max_z", c.kplus_max_z}, {"prev_max_z", c.prev_max_z}, {"w_max_z", c.w_max_z}};
    for (const auto& [name, value] : z_checks)
      csv.field(c.k).field(c.ell).field(std::string(name)).field(value).field(c.band).field(value <= c.band ? 1 : 0).end_row();
    const double kurt = c.excess_kurtosis.cwiseAbs().maxCoeff();
    csv.field(c.k).field(c.ell).field(std::string("max_abs_excess_kurtosis")).field(kurt).field(c.kurtosis_limit)
        .field(c.kurtosis_pass ? 1 : 0).end_row();
  }
}

}  // namespace mlmv
