#pragma once

#include <utility>
#include <vector>

namespace edgeforge {

double mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// CDF of Student's t with `dof` degrees of freedom (non-integer allowed).
double student_t_cdf(double t, double dof);

/// Upper-tail quantile: smallest t with CDF(t) >= p.
double student_t_quantile(double p, double dof);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;  // two-sided
};

/// Welch's two-sample t-test with unpooled variances and
/// Welch-Satterthwaite degrees of freedom. Zero variance in both samples
/// degenerates to p = 1 for equal means and p = 0 otherwise.
WelchResult welch_ttest(const std::vector<double>& a,
                        const std::vector<double>& b);

/// Two-sided 95% confidence interval for the mean via the t distribution.
std::pair<double, double> confidence_interval95(const std::vector<double>& xs);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<int>& a,
                           const std::vector<int>& b);

}  // namespace edgeforge
