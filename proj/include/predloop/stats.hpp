#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace predloop {

class DegenerateVarianceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sample Pearson correlation; needs n >= 3 and nonzero variance in both.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

/// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

/// Student-t CDF with `nu` degrees of freedom, evaluated by adaptive Simpson
/// integration of the density (absolute tolerance 1e-12; heavy tails handled
/// by a 1/t substitution).
double student_t_cdf(double t, int nu);

/// Two-sided p-value of the t statistic.
double student_t_two_sided_p(double t, int nu);

/// Inverse CDF by bisection (tolerance 1e-9 in probability).
double student_t_quantile(double p, int nu);

struct CorrelationReport {
    std::string metric;
    double pearson_r = 0.0;
    double r_squared = 0.0;
    double p_value = 1.0;
    double slope = 0.0;
    double intercept = 0.0;
    int n = 0;
    // Mean-response 95% CI band: y_hat(x) +- t_crit * resid_std *
    // sqrt(1/n + (x - x_mean)^2 / sxx).
    double x_mean = 0.0;
    double sxx = 0.0;
    double resid_std = 0.0;
    double t_crit = 0.0;

    double fit_at(double x) const { return slope * x + intercept; }
    double ci_half_width(double x) const;
};

/// Least-squares fit with R^2, the exact two-sided slope p-value via the t
/// distribution, and the 95% mean-response band parameters.
CorrelationReport linear_fit_stats(const std::vector<double>& xs, const std::vector<double>& ys,
                                   const std::string& metric_name = "");

}  // namespace predloop
