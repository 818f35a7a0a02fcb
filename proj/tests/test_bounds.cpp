#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "cellflow/bounds.hpp"
#include "support/oracles.hpp"

using namespace cellflow;

TEST_CASE("erf upper CDF against the independent erf oracle") {
    // n delta / (c sqrt(t)) = 1: value is 1 - erf(1), frozen from the series oracle.
    const double oracle = 1.0 - oracles::indep_erf(1.0);
    CHECK(oracle == doctest::Approx(0.15729920705028513).epsilon(1e-14));
    CHECK(bounds::erf_upper_cdf(1, 0.2, 0.2, 1.0) == doctest::Approx(oracle).epsilon(1e-13));

    // t -> infinity limit is 1.
    CHECK(bounds::erf_upper_cdf(1, 0.01, 1.0, 1e16) == doctest::Approx(1.0).epsilon(1e-9));

    // doubling n strictly decreases the value
    const double t = 0.37;
    CHECK(bounds::erf_upper_cdf(2, 0.05, 1.0, t) < bounds::erf_upper_cdf(1, 0.05, 1.0, t));

    // random-argument agreement with the oracle erfc
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> dist(0.01, 4.0);
    for (int i = 0; i < 2000; ++i) {
        const double d = dist(rng) * 0.1, c = dist(rng), tt = dist(rng);
        const double x = d / (c * std::sqrt(tt));
        CHECK(bounds::erf_upper_cdf(1, d, c, tt) ==
              doctest::Approx(oracles::indep_erfc(x)).epsilon(1e-12));
    }
}

TEST_CASE("log lower CDF") {
    // clamp boundary: t = (c n delta |ln delta|)^2 gives exactly 0
    const double delta = 0.07, c = 1.3;
    const double t0 = std::pow(c * delta * std::abs(std::log(delta)), 2);
    CHECK(bounds::log_lower_cdf(1, delta, c, t0) == 0.0);
    CHECK(bounds::log_lower_cdf(1, delta, c, 1e14) == doctest::Approx(1.0).epsilon(1e-6));
    // c = 1, n = 1, delta = 1/e, t = 4/e^2: 1 - (1/e)/(2/e) = 1/2
    CHECK(bounds::log_lower_cdf(1, std::exp(-1.0), 1.0, 4.0 * std::exp(-2.0)) ==
          doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("f_a family and the convolution inequality") {
    CHECK(bounds::fa(1.0, 0.5) == 0.0);
    CHECK(bounds::fa(1.0, 4.0) == doctest::Approx(0.5));
    CHECK(bounds::fa(2.0, -1.0) == 0.0);

    // both radicals collapse at t = a^2 + b^2
    CHECK(bounds::fa_convolve(1.0, 1.0, 2.0) == doctest::Approx(0.0).epsilon(1e-15));

    // a = b = 1, t = 4: closed form 1 - sqrt(3)/2, and the defining integral
    // int_{a^2}^{t-b^2} (a / (2 s^{3/2})) (1 - b/sqrt(t-s)) ds by quadrature.
    const double closed = bounds::fa_convolve(1.0, 1.0, 4.0);
    CHECK(closed == doctest::Approx(1.0 - std::sqrt(3.0) / 2.0).epsilon(1e-15));
    CHECK(closed == doctest::Approx(0.13397459621556135).epsilon(1e-14));
    const double numeric = oracles::adaptive_simpson(
        [](double s) { return 0.5 * std::pow(s, -1.5) * (1.0 - 1.0 / std::sqrt(4.0 - s)); },
        1.0, 3.0, 1e-13);
    CHECK(closed == doctest::Approx(numeric).epsilon(1e-9));

    // f_b * f_a' >= f_{a+b} on random pairs and a dense t grid
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> dist(0.05, 2.5);
    for (int k = 0; k < 100; ++k) {
        const double a = dist(rng), b = dist(rng);
        for (int j = 1; j <= 500; ++j) {
            const double t = 5.0 * (a + b) * (a + b) * j / 500.0;
            CHECK(bounds::fa_convolve(a, b, t) - bounds::fa(a + b, t) >= -1e-12);
        }
    }
}

TEST_CASE("nth crossing density: normalization, CDF, limits") {
    const double delta = 0.05, c0 = 1.2;
    for (const int n : {1, 2, 4}) {
        const double z = n * delta / c0;
        // u-substitution t = z^2/u^2 evaluated through the implementation
        const auto integrand = [&](double u) {
            const double t = z * z / (u * u);
            return bounds::nth_crossing_density(n, delta, c0, t) * 2.0 * z * z / (u * u * u);
        };
        const double mass = oracles::adaptive_simpson(integrand, 1e-9, 9.0, 1e-12);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));

        const double t = 0.004 * n * n;
        const double cdf = oracles::adaptive_simpson(integrand, z / std::sqrt(t), 9.0, 1e-12);
        CHECK(cdf == doctest::Approx(bounds::erf_upper_cdf(n, delta, c0, t)).epsilon(1e-8));
    }
    CHECK(bounds::nth_crossing_density(1, 0.05, 1.0, 1e-9) == doctest::Approx(0.0));
}

TEST_CASE("expected crossings sum") {
    // delta / sqrt(t) = 10: no crossings expected
    CHECK(bounds::expected_crossings_sum(1.0, 1.0, 0.01) < 1e-14);

    // self-similar scaling: value * delta / sqrt(t) constant within 1% over
    // two decades, in the regime delta << sqrt(t) where the sum is dense
    const double delta = 1e-3, c = 1.0;
    double ratio0 = 0.0;
    for (const double t : {1e-2, 1e-1, 1.0}) {
        const double r = bounds::expected_crossings_sum(delta, c, t) * delta / std::sqrt(t);
        if (ratio0 == 0.0)
            ratio0 = r;
        else
            CHECK(r == doctest::Approx(ratio0).epsilon(0.01));
    }

    // term count bound (c = 1): terms drop below 1e-14 by n = 12 sqrt(t)/delta
    for (const double t : {1e-2, 1e-1}) {
        int count = 0;
        while (bounds::erf_upper_cdf(count + 1, delta, c, t) >= 1e-14) ++count;
        CHECK(count <= static_cast<int>(std::ceil(12.0 * std::sqrt(t) / (c * delta))));
    }
}

TEST_CASE("quadrature identity") {
    // antiderivative at s1 = t/2, s0 = 0 equals 1/t
    const double t = 1.0;
    const auto F = [t](double s) { return std::sqrt(s) / (t * std::sqrt(t - s)); };
    CHECK(F(0.5) - F(0.0) == doctest::Approx(1.0 / t).epsilon(1e-15));
    CHECK(bounds::quad_identity_check(1.0, 0.0, 0.5) <= 1e-8);
    CHECK(bounds::quad_identity_check(1.0, 0.25, 0.5) <= 1e-8);
    CHECK(bounds::quad_identity_check(0.37, 0.1, 0.36) <= 1e-8);
    // integrable endpoint approach s1 -> t
    CHECK(bounds::quad_identity_check(1.0, 0.0, 1.0 - 1e-6) <= 1e-6);
    CHECK_THROWS_AS(bounds::quad_identity_check(1.0, 0.5, 0.25), std::invalid_argument);
}

TEST_CASE("Laplace transform of the crossing density") {
    CHECK(bounds::laplace_gprime(0.0, 0.3, 2.0) == 1.0);
    const double delta = 0.1, c0 = 2.0;
    CHECK(bounds::laplace_gprime(c0 * c0 / (4 * delta * delta), delta, c0) ==
          doctest::Approx(std::exp(-1.0)).epsilon(1e-15));

    // numerical Laplace transform of the n = 1 density matches to 1e-7
    const double s = 3.0, d2 = 0.05, c02 = 1.0;
    const double z = d2 / c02;
    const double numeric = oracles::adaptive_simpson(
        [&](double u) {
            const double tt = z * z / (u * u);
            return std::exp(-s * tt) * bounds::nth_crossing_density(1, d2, c02, tt) * 2.0 * z *
                   z / (u * u * u);
        },
        1e-9, 9.0, 1e-13);
    CHECK(numeric == doctest::Approx(bounds::laplace_gprime(s, d2, c02)).epsilon(1e-7));

    // product rule: laplace of the 3-fold convolution equals laplace(g')^3
    const double z3 = 3.0 * d2 / c02;
    const double numeric3 = oracles::adaptive_simpson(
        [&](double u) {
            const double tt = z3 * z3 / (u * u);
            return std::exp(-s * tt) * bounds::nth_crossing_density(3, d2, c02, tt) * 2.0 *
                   z3 * z3 / (u * u * u);
        },
        1e-9, 9.0, 1e-13);
    CHECK(numeric3 ==
          doctest::Approx(std::pow(bounds::laplace_gprime(s, d2, c02), 3)).epsilon(1e-6));
}

TEST_CASE("erfc inverse round trip") {
    for (const double y : {1e-6, 0.01, 0.1, 0.5, 1.0, 1.5, 1.99}) {
        const double x = bounds::erfc_inv(y);
        CHECK(std::erfc(x) == doctest::Approx(y).epsilon(1e-12));
    }
}
