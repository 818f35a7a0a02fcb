#pragma once

#include <cstddef>

// Closed-form evaluation of the explicit bounds: the erf crossing-time CDF
// upper bound, the |ln delta| lower bound, the f_a family and its convolution
// inequality, n-fold crossing densities, Laplace-transform identities, the
// crossing-count sum, and the quadrature identity. The scale constants c,
// c0 are fit parameters everywhere (callers supply them); the formulas are
// exact.
namespace cellflow::bounds {

// f_a(t) = (1 - a/sqrt(t))^+ for t > 0, zero otherwise.
double fa(double a, double t);

// Convolution f_b * f_a'(t). Closed form
//   1 - (a sqrt(t - b^2) + b sqrt(t - a^2)) / t   for t >= a^2 + b^2,
// zero below. Dominates f_{a+b}(t) for all t.
double fa_convolve(double a, double b, double t);

// 1 - erf(n delta / (c sqrt(t))): the chance a standard Brownian motion
// crosses (-delta, delta) at least n times by time t (up to the constant c).
double erf_upper_cdf(int n, double delta, double c, double t);

// (1 - c n delta |ln delta| / sqrt(t))^+.
double log_lower_cdf(int n, double delta, double c, double t);

// n delta / (c0 sqrt(pi) t^{3/2}) exp(-n^2 delta^2 / (c0^2 t)): the n-fold
// convolution (g')^{*n}(t) = (1/n^2) g'(t/n^2); a normalized 1/2-stable density.
double nth_crossing_density(int n, double delta, double c0, double t);

// Sum over n >= 1 of erf_upper_cdf(n, delta, c, t), truncated when terms
// drop below 1e-14. O(sqrt(t)/delta).
double expected_crossings_sum(double delta, double c, double t);

// Laplace transform of g' (the n = 1 crossing density): exp(-2 delta sqrt(s) / c0).
double laplace_gprime(double s, double delta, double c0);

// | integral_{s0}^{s1} ds / (2 sqrt(s (t-s)^3))  -  [sqrt(s)/(t sqrt(t-s))]_{s0}^{s1} |,
// the integral evaluated by adaptive Gauss-Kronrod quadrature. Requires
// 0 <= s0 < s1 < t.
double quad_identity_check(double t, double s0, double s1);

// Inverse complementary error function on (0, 2); used when fitting the
// scale constants from empirical CDFs.
double erfc_inv(double y);

// Adaptive Gauss-Kronrod (G7, K15) quadrature to the given tolerances.
// Panels are bisected until the K15-G7 error estimate passes; endpoint
// integrable singularities are handled by refinement (nodes are interior).
double adaptive_gk15(double (*f)(double, const void*), const void* ctx, double a, double b,
                     double abs_tol = 1e-12, double rel_tol = 1e-10, int max_depth = 60);

} // namespace cellflow::bounds
