#pragma once

// Test-only oracles, independent of the library implementations they check:
// an erf from its Maclaurin series plus a continued fraction for the tail,
// and a plain adaptive Simpson integrator.

#include <cmath>
#include <functional>

namespace oracles {

inline constexpr double sqrt_pi = 1.7724538509055160273;

// Maclaurin series: erf(x) = 2/sqrt(pi) sum (-1)^n x^(2n+1) / (n! (2n+1)).
inline double erf_series(double x) {
    double term = x, sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / n;
        const double add = term / (2 * n + 1);
        sum += add;
        if (std::abs(add) < 1e-18 * std::abs(sum)) break;
    }
    return 2.0 / sqrt_pi * sum;
}

// Continued fraction for erfc(x), x > 0 (modified Lentz).
inline double erfc_cf(double x) {
    const double tiny = 1e-300;
    double f = x, c = x, d = 0.0;
    for (int n = 1; n < 400; ++n) {
        const double a = 0.5 * n;
        d = x + a * d;
        if (d == 0.0) d = tiny;
        c = x + a / c;
        if (c == 0.0) c = tiny;
        d = 1.0 / d;
        const double mult = c * d;
        f *= mult;
        if (std::abs(mult - 1.0) < 1e-16) break;
    }
    return std::exp(-x * x) / (sqrt_pi * f);
}

inline double indep_erf(double x) {
    if (x < 0.0) return -indep_erf(-x);
    if (x <= 3.0) return erf_series(x);
    return 1.0 - erfc_cf(x);
}

inline double indep_erfc(double x) {
    if (x > 3.0) return erfc_cf(x);
    return 1.0 - indep_erf(x);
}

inline double simpson_panel(const std::function<double(double)>& f, double a, double b,
                            double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson_panel(f, a, m, fa, flm, fm);
    const double right = simpson_panel(f, m, b, fm, frm, fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int depth = 48) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    return adaptive_simpson_rec(f, a, b, fa, fm, fb, simpson_panel(f, a, b, fa, fm, fb), tol,
                                depth);
}

} // namespace oracles
