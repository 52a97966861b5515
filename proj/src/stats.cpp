#include "edgeforge/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace edgeforge {

double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) {
    throw std::invalid_argument("sample_variance: need at least 2 points");
  }
  double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

namespace {

// Lentz continued fraction for the incomplete beta function.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) {
    throw std::domain_error("incomplete_beta: x outside [0, 1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (dof <= 0.0) throw std::domain_error("student_t_cdf: dof must be > 0");
  double x = dof / (dof + t * t);
  double tail = 0.5 * incomplete_beta(dof / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double dof) {
  if (p <= 0.0 || p >= 1.0) {
    throw std::domain_error("student_t_quantile: p outside (0, 1)");
  }
  double lo = -1e3, hi = 1e3;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, dof) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

WelchResult welch_ttest(const std::vector<double>& a,
                        const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw std::invalid_argument("welch_ttest: both samples need >= 2 points");
  }
  double ma = mean(a), mb = mean(b);
  double va = sample_variance(a), vb = sample_variance(b);
  double na = static_cast<double>(a.size());
  double nb = static_cast<double>(b.size());
  WelchResult r;
  double se2 = va / na + vb / nb;
  if (se2 == 0.0) {
    r.t = ma == mb ? 0.0 : (ma < mb
                                ? -std::numeric_limits<double>::infinity()
                                : std::numeric_limits<double>::infinity());
    r.dof = na + nb - 2.0;
    r.p = ma == mb ? 1.0 : 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.dof = se2 * se2 /
          ((va / na) * (va / na) / (na - 1.0) +
           (vb / nb) * (vb / nb) / (nb - 1.0));
  r.p = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.dof));
  return r;
}

std::pair<double, double> confidence_interval95(
    const std::vector<double>& xs) {
  if (xs.size() < 2) {
    throw std::invalid_argument("confidence_interval95: need >= 2 runs");
  }
  double m = mean(xs);
  double s = std::sqrt(sample_variance(xs));
  double n = static_cast<double>(xs.size());
  double tq = student_t_quantile(0.975, n - 1.0);
  double half = tq * s / std::sqrt(n);
  return {m - half, m + half};
}

double adjusted_rand_index(const std::vector<int>& a,
                           const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("adjusted_rand_index: size mismatch");
  }
  int ka = 0, kb = 0;
  for (int x : a) ka = std::max(ka, x + 1);
  for (int x : b) kb = std::max(kb, x + 1);
  std::vector<std::vector<long long>> table(ka, std::vector<long long>(kb, 0));
  for (std::size_t i = 0; i < a.size(); ++i) table[a[i]][b[i]]++;
  auto choose2 = [](long long x) { return x * (x - 1) / 2; };
  long long sum_ij = 0;
  std::vector<long long> row(ka, 0), col(kb, 0);
  for (int i = 0; i < ka; ++i) {
    for (int j = 0; j < kb; ++j) {
      sum_ij += choose2(table[i][j]);
      row[i] += table[i][j];
      col[j] += table[i][j];
    }
  }
  long long sum_a = 0, sum_b = 0;
  for (long long r : row) sum_a += choose2(r);
  for (long long c : col) sum_b += choose2(c);
  double n2 = static_cast<double>(choose2(static_cast<long long>(a.size())));
  double expected = static_cast<double>(sum_a) * sum_b / n2;
  double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // degenerate: single cluster each
  return (sum_ij - expected) / (max_index - expected);
}

}  // namespace edgeforge
