#include "mlmatvamp/linalg.hpp"

#include <doctest.h>

#include <cmath>

using namespace mlmv;

TEST_CASE("haar sample of size one is a sign with both signs equally likely") {
  Stream rng(1);
  int plus = 0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    const Mat v = sample_haar_orthogonal<double>(1, rng);
    CHECK(std::abs(std::abs(v(0, 0)) - 1.0) < 1e-15);
    plus += v(0, 0) > 0.0;
  }
  CHECK(std::abs(plus - draws / 2) < 4.0 * std::sqrt(draws / 4.0));
}

TEST_CASE("haar samples are orthogonal for any size and seed") {
  for (Index n : {2, 5, 17, 40}) {
    Stream rng(static_cast<std::uint64_t>(n) * 31u);
    const Mat v = sample_haar_orthogonal<double>(n, rng);
    CHECK((v.transpose() * v - Mat::Identity(n, n)).norm() <= 1e-10);
  }
}

TEST_CASE("haar column entries have second moment 1/n") {
  Stream rng(3);
  const int samples = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Mat v = sample_haar_orthogonal<double>(3, rng);
    const double x = v(0, 0) * v(0, 0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / samples;
  const double se = std::sqrt((sum2 / samples - mean * mean) / samples);
  CHECK(std::abs(mean - 1.0 / 3.0) <= 3.0 * se);
}

TEST_CASE("svd of simple matrices") {
  const SvdFactors<double> id = svd_factor(Mat(Mat::Identity(3, 3)));
  CHECK((id.singular - Vec::Ones(3)).norm() < 1e-12);
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 2.0;
  const SvdFactors<double> f = svd_factor(d);
  CHECK(std::abs(f.singular(0) - 3.0) < 1e-12);
  CHECK(std::abs(f.singular(1) - 2.0) < 1e-12);
}

TEST_CASE("svd reconstructs wide and tall matrices with orthogonal factors") {
  Stream rng(4);
  for (auto [r, c] : {std::pair<Index, Index>{5, 3}, {3, 5}, {20, 20}, {1, 7}}) {
    const Mat w = gaussian_matrix<double>(r, c, rng);
    const SvdFactors<double> f = svd_factor(w);
    CHECK((f.reconstruct() - w).norm() / w.norm() <= 1e-10);
    CHECK((f.v_out.transpose() * f.v_out - Mat::Identity(r, r)).norm() <= 1e-10);
    CHECK((f.v_in * f.v_in.transpose() - Mat::Identity(c, c)).norm() <= 1e-10);
    for (Index i = 1; i < f.singular.size(); ++i) CHECK(f.singular(i) <= f.singular(i - 1));
    CHECK(f.padded_out().size() == r);
    CHECK(f.padded_in().size() == c);
  }
}

TEST_CASE("linear algebra templates instantiate for single precision") {
  Stream rng(5);
  const Eigen::MatrixXf w = gaussian_matrix<float>(6, 4, rng);
  const SvdFactors<float> f = svd_factor(w);
  CHECK((f.reconstruct() - w).norm() / w.norm() <= 1e-5f);
  const Eigen::MatrixXf q = sample_haar_orthogonal<float>(4, rng);
  CHECK((q.transpose() * q - Eigen::MatrixXf::Identity(4, 4)).norm() <= 1e-5f);
  Eigen::MatrixXf m(2, 2);
  m << -1.0f, 0.0f, 0.0f, 5.0f;
  const Eigen::MatrixXf c = psd_regularize(m, 1e-3, 1e3);
  CHECK(std::abs(c(0, 0) - 1e-3f) < 1e-6f);
}

TEST_CASE("psd_regularize leaves admissible matrices unchanged") {
  Mat m(2, 2);
  m << 2.0, 0.5, 0.5, 1.0;
  bool clamped = true;
  const Mat out = psd_regularize(m, 1e-6, 1e6, &clamped);
  CHECK(!clamped);
  CHECK((out - m).norm() <= 1e-12);
}

TEST_CASE("psd_regularize clamps each eigenvalue") {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = -1.0;
  m(1, 1) = 5.0;
  bool clamped = false;
  const Mat out = psd_regularize(m, 1e-6, 1e6, &clamped);
  CHECK(clamped);
  CHECK(std::abs(out(0, 0) - 1e-6) < 1e-15);
  CHECK(std::abs(out(1, 1) - 5.0) < 1e-12);
  CHECK(std::abs(out(0, 1)) < 1e-15);
}

TEST_CASE("psd_regularize output spectrum lies inside the bounds") {
  Stream rng(6);
  for (int t = 0; t < 20; ++t) {
    const Mat a = 10.0 * gaussian_matrix<double>(4, 4, rng);
    const Mat out = psd_regularize(Mat(a + a.transpose()), 0.5, 20.0);
    const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(out).eigenvalues();
    CHECK(ev.minCoeff() >= 0.5 - 1e-9);
    CHECK(ev.maxCoeff() <= 20.0 + 1e-9);
  }
}

TEST_CASE("psd_regularize rejects non-finite input") {
  Mat m = Mat::Identity(2, 2);
  m(0, 1) = std::nan("");
  CHECK_THROWS_AS(psd_regularize(m, 1e-6, 1e6), Error);
}

TEST_CASE("gaussian row sampling") {
  Stream rng(7);
  CHECK(sample_rows_gaussian(10, Mat(Mat::Zero(3, 3)), rng).norm() == 0.0);

  const Index n = 100000;
  const Mat x = sample_rows_gaussian(n, Mat(Mat::Identity(2, 2)), rng);
  const Mat emp = x.transpose() * x / static_cast<double>(n);
  CHECK((emp - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 3.0 * std::sqrt(2.0 / n));

  Mat cov(2, 2);
  cov << 2.0, 1.0, 1.0, 2.0;
  const MomentEstimate m = second_moment(sample_rows_gaussian(n, cov, rng));
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) CHECK(std::abs(m.value(i, j) - cov(i, j)) <= 5.0 * m.std_error(i, j));
}

TEST_CASE("psd_sqrt rejects a negative eigenvalue") {
  Mat m = Mat::Identity(2, 2);
  m(1, 1) = -1.0;
  CHECK_THROWS_AS(psd_sqrt(m), Error);
}

TEST_CASE("streams are reproducible and derived children differ") {
  Stream a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Stream c = Stream(42).derive("x", 1), d = Stream(42).derive("x", 2), e = Stream(42).derive("x", 1);
  const auto cv = c.next_u64();
  CHECK(cv != d.next_u64());
  CHECK(cv == e.next_u64());
  Stream u(9);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x > 0.0);
    CHECK(x < 1.0);
  }
}
