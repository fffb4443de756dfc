#pragma once

#include <cstddef>
#include <vector>

namespace factlab {

struct Correlation {
    double rho = 0.0;
    double p_value = 1.0; // two-sided
    size_t n = 0;
};

// Spearman rank correlation with average ranks for ties; p-value from the
// t-distribution approximation t = rho*sqrt((n-2)/(1-rho^2)).
Correlation spearman(const std::vector<double>& x, const std::vector<double>& y);

struct Chi2Result {
    double statistic = 0.0;
    double p_value = 1.0;
    size_t dof = 0;
};

// Goodness-of-fit of observed counts against expected counts (same length,
// expected > 0). dof = k - 1.
Chi2Result chi_square_gof(const std::vector<double>& observed,
                          const std::vector<double>& expected);

// Ordinary least-squares slope of y against x.
double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> v);

// Regularized incomplete gamma P(a, x) and Q(a, x) = 1 - P(a, x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

// CDF of Student's t with nu degrees of freedom.
double student_t_cdf(double t, double nu);

} // namespace factlab
