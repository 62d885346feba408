#include "sslgcil/adir.hpp"
#include "sslgcil/rng.hpp"
#include "sslgcil/signal.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

using namespace sslgcil;
using Catch::Approx;

namespace {

struct Sample {
  Vector h;
  int cls;
  Vector z;
};

std::vector<Sample> random_samples(int n, int dim, int classes, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.h.resize(dim);
    for (auto& v : s.h) v = normal(rng);
    s.cls = 30 * pick(rng);
    s.z = gaussian_label(s.cls);
    out.push_back(std::move(s));
  }
  return out;
}

// Plain row-major Gaussian elimination with partial pivoting, no Eigen solvers.
std::vector<std::vector<double>> gauss_solve(std::vector<std::vector<double>> a, std::vector<std::vector<double>> b) {
  const std::size_t n = a.size(), m = b[0].size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(a[r][k]) > std::abs(a[piv][k])) piv = r;
    std::swap(a[k], a[piv]);
    std::swap(b[k], b[piv]);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = a[r][k] / a[k][k];
      for (std::size_t c = k; c < n; ++c) a[r][c] -= f * a[k][c];
      for (std::size_t c = 0; c < m; ++c) b[r][c] -= f * b[k][c];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t c = 0; c < m; ++c) {
      double s = b[k][c];
      for (std::size_t j = k + 1; j < n; ++j) s -= a[k][j] * b[j][c];
      b[k][c] = s / a[k][k];
    }
  }
  return b;
}

// Weighted ridge from the raw samples: (sum_i w_i h_i h_i^T + gamma I) W = sum_i w_i h_i z_i^T.
Matrix ridge_oracle(const std::vector<Sample>& samples, int dim, double gamma, bool reweight) {
  std::map<int, int> count;
  for (const auto& s : samples) ++count[s.cls];
  std::vector<std::vector<double>> a(dim, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> c(dim, std::vector<double>(kNumBins, 0.0));
  for (const auto& s : samples) {
    const double w = reweight ? 1.0 / count[s.cls] : 1.0;
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) a[i][j] += w * s.h[i] * s.h[j];
      for (int j = 0; j < kNumBins; ++j) c[i][j] += w * s.h[i] * s.z[j];
    }
  }
  for (int i = 0; i < dim; ++i) a[i][i] += gamma;
  const auto x = gauss_solve(a, c);
  Matrix out(dim, kNumBins);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < kNumBins; ++j) out(i, j) = x[i][j];
  return out;
}

double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

AdirState accumulate_all(const std::vector<Sample>& samples, int dim, AdirOptions opt = {}) {
  AdirState st(dim, opt);
  for (const auto& s : samples) st.accumulate(s.h, s.cls, s.z);
  return st;
}

}  // namespace

TEST_CASE("accumulate matches dense products", "[adir]") {
  Rng rng(1);
  const auto samples = random_samples(5, 8, 1, rng);
  const AdirState st = accumulate_all(samples, 8);
  Matrix h(5, 8), z(5, kNumBins);
  for (int i = 0; i < 5; ++i) {
    h.row(i) = samples[i].h.transpose();
    z.row(i) = samples[i].z.transpose();
  }
  const auto& s = st.stats().at(0);
  CHECK(s.count == 5);
  CHECK(rel_err(s.auto_corr, h.transpose() * h) <= 1e-10);
  CHECK(rel_err(s.cross_corr, h.transpose() * z) <= 1e-10);

  AdirState twice(8);
  twice.accumulate(samples[0].h, 3, samples[0].z);
  twice.accumulate(samples[0].h, 3, samples[0].z);
  CHECK(rel_err(twice.stats().at(3).auto_corr, 2.0 * samples[0].h * samples[0].h.transpose()) <= 1e-15);

  AdirState bad(8);
  CHECK_THROWS_AS(bad.accumulate(Vector::Zero(7), 0, samples[0].z), std::invalid_argument);
  CHECK_THROWS_AS(bad.accumulate(samples[0].h, 0, Vector::Zero(10)), std::invalid_argument);
  CHECK_THROWS_AS(bad.accumulate(samples[0].h, 360, samples[0].z), std::out_of_range);
  CHECK_THROWS_AS(bad.solve(0.1), std::logic_error);
}

TEST_CASE("solve matches an independent weighted ridge", "[adir]") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    const auto samples = random_samples(200, 32, 12, rng);
    const AdirState st = accumulate_all(samples, 32);
    CHECK(rel_err(st.solve_with_gamma(2.5, true).weight, ridge_oracle(samples, 32, 2.5, true)) <= 1e-8);
    CHECK(rel_err(st.solve_with_gamma(0.5, false).weight, ridge_oracle(samples, 32, 0.5, false)) <= 1e-8);
  }
}

TEST_CASE("single-sample scalar ridge", "[adir]") {
  AdirState st(4);
  Vector h = Vector::Zero(4);
  h(0) = 0.5;
  Vector z = Vector::Zero(kNumBins);
  z(0) = 1.0;
  st.accumulate(h, 0, z);
  const Matrix w = st.solve_with_gamma(1.0, true).weight;
  CHECK(w(0, 0) == Approx(0.4).epsilon(1e-14));
  Matrix rest = w;
  rest(0, 0) = 0.0;
  CHECK(rest.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sequential accumulation equals the pooled batch", "[adir]") {
  Rng rng(7);
  const auto samples = random_samples(150, 16, 10, rng);
  Matrix h(150, 16), z(150, kNumBins);
  std::vector<int> cls;
  for (int i = 0; i < 150; ++i) {
    h.row(i) = samples[i].h.transpose();
    z.row(i) = samples[i].z.transpose();
    cls.push_back(samples[i].cls);
  }
  AdirState batch(16);
  batch.accumulate_batch(h, cls, z);
  const Matrix ref = batch.solve_with_gamma(3.0, true).weight;
  for (int p = 0; p < 3; ++p) {
    auto shuffled = samples;
    Rng prng(100 + p);
    std::shuffle(shuffled.begin(), shuffled.end(), prng);
    const AdirState seq = accumulate_all(shuffled, 16);
    for (const auto& [c, s] : batch.stats()) {
      CHECK(rel_err(seq.stats().at(c).auto_corr, s.auto_corr) <= 1e-12);
      CHECK(rel_err(seq.stats().at(c).cross_corr, s.cross_corr) <= 1e-12);
    }
    CHECK(rel_err(seq.solve_with_gamma(3.0, true).weight, ref) <= 1e-6);
  }

  // two shards merged
  AdirState a(16), b(16);
  for (int i = 0; i < 150; ++i) (i % 2 ? a : b).accumulate(samples[i].h, samples[i].cls, samples[i].z);
  a.merge(b);
  CHECK(rel_err(a.solve_with_gamma(3.0, true).weight, ref) <= 1e-12);
  CHECK_THROWS_AS(a.merge(AdirState(3)), std::invalid_argument);
}

TEST_CASE("class reappearance accumulates", "[adir]") {
  Rng rng(9);
  const auto samples = random_samples(40, 6, 1, rng);
  const auto other = random_samples(10, 6, 1, rng);
  AdirState split(6), whole(6);
  // task 1: first 25 samples of class 0; task 2: class 90, then class 0 again
  for (int i = 0; i < 25; ++i) split.accumulate(samples[i].h, 0, samples[i].z);
  for (const auto& s : other) split.accumulate(s.h, 90, gaussian_label(90));
  for (int i = 25; i < 40; ++i) split.accumulate(samples[i].h, 0, samples[i].z);
  for (const auto& s : samples) whole.accumulate(s.h, 0, s.z);
  const auto& s1 = split.stats().at(0);
  const auto& s2 = whole.stats().at(0);
  CHECK(s1.count == 40);
  CHECK(rel_err(s1.auto_corr, s2.auto_corr) <= 1e-12);
  CHECK(rel_err(s1.cross_corr, s2.cross_corr) <= 1e-12);
  CHECK(split.stats().at(90).count == 10);
}

TEST_CASE("per-class duplication leaves W unchanged", "[adir]") {
  Rng rng(11);
  const auto samples = random_samples(120, 16, 6, rng);
  const int target = samples[0].cls;
  auto dup = samples;
  for (const auto& s : samples)
    if (s.cls == target)
      for (int k = 0; k < 4; ++k) dup.push_back(s);
  const Matrix w1 = accumulate_all(samples, 16).solve_with_gamma(1.0, true).weight;
  const Matrix w5 = accumulate_all(dup, 16).solve_with_gamma(1.0, true).weight;
  CHECK(rel_err(w5, w1) <= 1e-10);
  // without re-weighting the duplicated class dominates
  const Matrix u1 = accumulate_all(samples, 16).solve_with_gamma(1.0, false).weight;
  const Matrix u5 = accumulate_all(dup, 16).solve_with_gamma(1.0, false).weight;
  CHECK(rel_err(u5, u1) > 1e-3);
}

TEST_CASE("gini coefficient and gamma schedule", "[adir]") {
  CHECK(gini(std::vector<double>{3, 1}) == 0.25);
  CHECK(gini(std::vector<double>{7, 7, 7, 7}) == 0.0);
  for (int n : {2, 5, 60}) {
    std::vector<double> c(n, 0.0);
    c[0] = 40.0;
    CHECK(gini(c) == Approx(static_cast<double>(n - 1) / n).epsilon(1e-14));
  }
  const std::vector<double> counts{500, 120, 33, 7, 250};
  std::vector<double> scaled;
  for (double c : counts) scaled.push_back(3.5 * c);
  CHECK(gini(scaled) == Approx(gini(counts)).epsilon(1e-14));
  CHECK(gini(std::vector<int>{3, 1}) == 0.25);
  CHECK_THROWS_AS(gini(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(gini(std::vector<double>{0, 0}), std::invalid_argument);

  CHECK(adaptive_gamma(0.5, 100.0, 2.0) == 100.0);
  CHECK(adaptive_gamma(1.0, 100.0, 2.0) == Approx(271.8281828459045).epsilon(1e-14));
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    double a = u(rng), b = u(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    CHECK(adaptive_gamma(a, 100.0, 2.0) < adaptive_gamma(b, 100.0, 2.0));
  }
  CHECK_THROWS_AS(adaptive_gamma(0.3, 0.0, 2.0), std::invalid_argument);
}

TEST_CASE("solve respects the option flags", "[adir]") {
  Rng rng(5);
  const auto samples = random_samples(80, 8, 4, rng);
  AdirOptions opt;
  const AdirState st = accumulate_all(samples, 8, opt);
  const auto w = st.solve(0.75);
  CHECK(w.gini_used == 0.75);
  CHECK(w.gamma_used == Approx(100.0 * std::exp(0.5)).epsilon(1e-14));
  CHECK(rel_err(w.weight, ridge_oracle(samples, 8, w.gamma_used, true)) <= 1e-8);

  // analytic baseline without ARM: uniform weights, fixed gamma0
  opt.reweight = false;
  opt.adaptive_gamma = false;
  const auto plain = accumulate_all(samples, 8, opt).solve(0.75);
  CHECK(plain.gamma_used == 100.0);
  CHECK(rel_err(plain.weight, ridge_oracle(samples, 8, 100.0, false)) <= 1e-8);
}

TEST_CASE("unseen bins stay small and finite", "[adir]") {
  Rng rng(2);
  const auto samples = random_samples(50, 8, 3, rng);
  const Matrix w = accumulate_all(samples, 8).solve_with_gamma(1.0, true).weight;
  CHECK(w.allFinite());
  // bin 180 is far from every target (0, 30, 60) so its column is close to zero
  CHECK(w.col(180).norm() < 1e-6 * w.col(30).norm());
}

TEST_CASE("prediction and tie rule", "[adir]") {
  const Matrix zero = Matrix::Zero(5, kNumBins);
  const Vector h = Vector::LinSpaced(5, 1.0, 2.0);
  CHECK(predict_doa(zero, h) == 0);
  Matrix w = Matrix::Zero(5, kNumBins);
  w.col(217) = h / h.squaredNorm();
  CHECK(predict_doa(w, h) == 217);
  CHECK(predict_logits(w, h)(217) == Approx(1.0).epsilon(1e-15));
  Matrix two(2, kNumBins);
  two.setZero();
  two(0, 12) = 1.0;
  two(1, 300) = 2.0;
  CHECK(argmax_rows(two) == std::vector<int>{12, 300});
  CHECK(argmax_rows(Matrix::Zero(3, kNumBins)) == std::vector<int>{0, 0, 0});
}

TEST_CASE("restore validates shapes", "[adir]") {
  AdirState st(4);
  ClassStats bad{Matrix::Zero(3, 3), Matrix::Zero(3, kNumBins), 1};
  CHECK_THROWS_AS(st.restore(1, bad), std::invalid_argument);
  ClassStats ok{Matrix::Identity(4, 4), Matrix::Zero(4, kNumBins), 2};
  st.restore(1, ok);
  CHECK(st.stats().at(1).count == 2);
}
