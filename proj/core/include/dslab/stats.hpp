#pragma once

#include <cstddef>
#include <span>

namespace dslab {

struct SampleStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample std, n-1 denominator; 0 for a single value
  std::size_t n = 0;
};

// Mean and sample standard deviation of at least one value.
SampleStats aggregate(std::span<const double> xs);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;  // Welch-Satterthwaite
  double p = 1.0;    // two-sided
};

// Unequal-variance two-sample t-test. Each group needs n >= 2. When both
// variances vanish the test degenerates: equal means give t = 0, p = 1;
// different means give an infinite t and p = 0.
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

// Standardized mean difference (baseline - method) over the pooled std,
// sqrt((var_b + var_m) / 2). Zero pooled variance yields a signed infinity
// when the means differ and 0 when they agree.
double cohens_d(std::span<const double> baseline,
                std::span<const double> method);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 1.0;
};

// Ordinary least squares y = slope * x + intercept over >= 2 points.
// r2 = 1 - SS_res / SS_tot; a constant y with zero residuals counts as 1.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

// I_x(a, b) via the Lentz continued fraction; |error| well under 1e-6.
double regularized_incomplete_beta(double a, double b, double x);

// P(T <= t) for Student's t with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

}  // namespace dslab
