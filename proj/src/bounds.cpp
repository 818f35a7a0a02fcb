#include "cellflow/bounds.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cellflow::bounds {

namespace {

constexpr double sqrt_pi = 1.7724538509055160273;

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Nodes/weights of the 7-point Gauss and 15-point Kronrod rules on [-1, 1]
// (QUADPACK values). Kronrod nodes are interior, so endpoint singularities
// are never evaluated.
constexpr double kronrod_x[8] = {
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
};
constexpr double kronrod_w[8] = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
};
constexpr double gauss_w[4] = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
};

struct PanelResult {
    double integral;
    double error;
};

PanelResult gk15_panel(double (*f)(double, const void*), const void* ctx, double a, double b) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double fv[15];
    for (int i = 0; i < 7; ++i) {
        fv[i] = f(mid - half * kronrod_x[i], ctx);
        fv[14 - i] = f(mid + half * kronrod_x[i], ctx);
    }
    fv[7] = f(mid, ctx);

    double k15 = kronrod_w[7] * fv[7];
    for (int i = 0; i < 7; ++i) k15 += kronrod_w[i] * (fv[i] + fv[14 - i]);

    double g7 = gauss_w[3] * fv[7];
    for (int i = 0; i < 3; ++i) g7 += gauss_w[i] * (fv[2 * i + 1] + fv[13 - 2 * i]);

    k15 *= half;
    g7 *= half;
    return {k15, std::abs(k15 - g7)};
}

double adaptive_rec(double (*f)(double, const void*), const void* ctx, double a, double b,
                    double tol, int depth, int max_depth) {
    const PanelResult r = gk15_panel(f, ctx, a, b);
    if (r.error <= tol || depth >= max_depth) return r.integral;
    const double mid = 0.5 * (a + b);
    return adaptive_rec(f, ctx, a, mid, 0.5 * tol, depth + 1, max_depth) +
           adaptive_rec(f, ctx, mid, b, 0.5 * tol, depth + 1, max_depth);
}

struct QuadIdCtx {
    double t;
};

double quad_id_integrand(double s, const void* ctx) {
    const double t = static_cast<const QuadIdCtx*>(ctx)->t;
    const double d = t - s;
    return 1.0 / (2.0 * std::sqrt(s * d * d * d));
}

} // namespace

double adaptive_gk15(double (*f)(double, const void*), const void* ctx, double a, double b,
                     double abs_tol, double rel_tol, int max_depth) {
    const PanelResult whole = gk15_panel(f, ctx, a, b);
    const double tol = std::max(abs_tol, rel_tol * std::abs(whole.integral));
    if (whole.error <= tol) return whole.integral;
    return adaptive_rec(f, ctx, a, b, tol, 0, max_depth);
}

double fa(double a, double t) {
    require(a > 0.0, "fa: a must be > 0");
    if (t <= 0.0) return 0.0;
    const double v = 1.0 - a / std::sqrt(t);
    return v > 0.0 ? v : 0.0;
}

double fa_convolve(double a, double b, double t) {
    require(a > 0.0 && b > 0.0, "fa_convolve: a, b must be > 0");
    if (t < a * a + b * b) return 0.0;
    return 1.0 - (a * std::sqrt(t - b * b) + b * std::sqrt(t - a * a)) / t;
}

double erf_upper_cdf(int n, double delta, double c, double t) {
    require(n >= 1, "erf_upper_cdf: n must be >= 1");
    require(delta > 0.0 && c > 0.0 && t > 0.0, "erf_upper_cdf: delta, c, t must be > 0");
    return std::erfc(n * delta / (c * std::sqrt(t)));
}

double log_lower_cdf(int n, double delta, double c, double t) {
    require(n >= 1, "log_lower_cdf: n must be >= 1");
    require(delta > 0.0 && delta < 1.0, "log_lower_cdf: need 0 < delta < 1");
    require(c > 0.0 && t > 0.0, "log_lower_cdf: c, t must be > 0");
    const double v = 1.0 - c * n * delta * std::abs(std::log(delta)) / std::sqrt(t);
    return v > 0.0 ? v : 0.0;
}

double nth_crossing_density(int n, double delta, double c0, double t) {
    require(n >= 1, "nth_crossing_density: n must be >= 1");
    require(delta > 0.0 && c0 > 0.0 && t > 0.0, "nth_crossing_density: delta, c0, t must be > 0");
    const double z = n * delta / c0;
    return z / (sqrt_pi * std::pow(t, 1.5)) * std::exp(-z * z / t);
}

double expected_crossings_sum(double delta, double c, double t) {
    require(delta > 0.0 && c > 0.0 && t > 0.0, "expected_crossings_sum: delta, c, t must be > 0");
    double sum = 0.0;
    for (int n = 1;; ++n) {
        const double term = erf_upper_cdf(n, delta, c, t);
        if (term < 1e-14) break;
        sum += term;
    }
    return sum;
}

double laplace_gprime(double s, double delta, double c0) {
    require(s >= 0.0, "laplace_gprime: s must be >= 0");
    require(delta > 0.0 && c0 > 0.0, "laplace_gprime: delta, c0 must be > 0");
    return std::exp(-2.0 * delta * std::sqrt(s) / c0);
}

double quad_identity_check(double t, double s0, double s1) {
    require(0.0 <= s0 && s0 < s1 && s1 < t, "quad_identity_check: need 0 <= s0 < s1 < t");
    const QuadIdCtx ctx{t};
    const double numeric = adaptive_gk15(quad_id_integrand, &ctx, s0, s1, 1e-13, 1e-11, 70);
    const auto antiderivative = [t](double s) { return std::sqrt(s) / (t * std::sqrt(t - s)); };
    const double exact = antiderivative(s1) - antiderivative(s0);
    return std::abs(numeric - exact);
}

double erfc_inv(double y) {
    require(y > 0.0 && y < 2.0, "erfc_inv: y must be in (0, 2)");
    // Bisection bracket, then Newton polish on erfc(x) - y.
    double lo = -6.0, hi = 6.0;
    while (std::erfc(lo) < y) lo -= 2.0;
    while (std::erfc(hi) > y) hi += 2.0;
    for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (std::erfc(mid) > y ? lo : hi) = mid;
    }
    double x = 0.5 * (lo + hi);
    for (int i = 0; i < 4; ++i) {
        const double r = std::erfc(x) - y;
        const double d = -2.0 / sqrt_pi * std::exp(-x * x);
        if (d == 0.0) break;
        x -= r / d;
    }
    return x;
}

} // namespace cellflow::bounds
