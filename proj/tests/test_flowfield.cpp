#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "cellflow/flowfield.hpp"

using namespace cellflow;
using flow::Point;

namespace {

std::mt19937 rng(20240601u);

Point random_point(double lo = -8.0, double hi = 8.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return {dist(rng), dist(rng)};
}

} // namespace

TEST_CASE("hamiltonian at landmark points") {
    CHECK(flow::hamiltonian({flow::pi / 2, flow::pi / 2}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(flow::hamiltonian({0.0, 0.0}) == 0.0);
    CHECK(flow::hamiltonian({flow::pi / 2, flow::pi / 6}) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("velocity at landmark points and orthogonality to grad h") {
    const Point center = flow::velocity({flow::pi / 2, flow::pi / 2});
    CHECK(std::abs(center.x1) < 1e-15);
    CHECK(std::abs(center.x2) < 1e-15);
    const Point midedge = flow::velocity({flow::pi / 2, 0.0});
    CHECK(midedge.x1 == doctest::Approx(-1.0));
    CHECK(midedge.x2 == doctest::Approx(0.0));

    for (int i = 0; i < 100000; ++i) {
        const Point p = random_point();
        const Point v = flow::velocity(p);
        const Point g = flow::grad_h(p);
        CHECK(std::abs(v.x1 * g.x1 + v.x2 * g.x2) <= 1e-12);
    }
}

TEST_CASE("divergence of v vanishes at 1e6 random points") {
    double worst = 0.0;
    for (int i = 0; i < 1000000; ++i)
        worst = std::max(worst, std::abs(flow::velocity_divergence(random_point())));
    CHECK(worst <= 1e-12);
}

TEST_CASE("gradient and Laplacian identities") {
    CHECK(flow::laplacian_h({flow::pi / 2, flow::pi / 2}) == doctest::Approx(-2.0));
    const Point g = flow::grad_h({0.0, flow::pi / 2});
    CHECK(g.x1 == doctest::Approx(1.0));
    CHECK(std::abs(g.x2) < 1e-15);

    for (int i = 0; i < 100000; ++i) {
        const Point p = random_point();
        CHECK(std::abs(flow::laplacian_h(p) + 2.0 * flow::hamiltonian(p)) <= 1e-12);
    }
}

TEST_CASE("FlowParams validation") {
    flow::FlowParams ok{1000.0, 1.0, 0.15, 0.30};
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.delta() == doctest::Approx(1.0 / std::sqrt(1000.0)));

    flow::FlowParams bad_order{1000.0, 1.0, 0.30, 0.15};
    CHECK_THROWS_AS(bad_order.validate(), std::invalid_argument);
    flow::FlowParams fat_layer{0.5, 1.0, 0.15, 0.30}; // delta > 1
    CHECK_THROWS_AS(fat_layer.validate(), std::invalid_argument);
    flow::FlowParams zero_a{0.0, 1.0, 0.15, 0.30}; // pure diffusion allowed
    CHECK_NOTHROW(zero_a.validate());
}

TEST_CASE("region classification at landmark points") {
    for (const double A : {100.0, 400.0, 1600.0, 6400.0}) {
        const flow::FlowParams params{A, 1.0, 0.15, 0.30};
        CHECK(flow::classify_region({0.001, 0.001}, params) == flow::RegionTag::CornerLayer);
        CHECK(flow::classify_region({flow::pi / 2, flow::pi / 2}, params) ==
              flow::RegionTag::Interior);
        // mid-edge point with |h| < delta
        const double x2 = std::asin(0.5 * params.delta());
        CHECK(flow::classify_region({flow::pi / 2, x2}, params) == flow::RegionTag::EdgeLayer);
    }
}

TEST_CASE("classification is invariant under lattice symmetry and coordinate swap") {
    const flow::FlowParams params{900.0, 1.0, 0.15, 0.30};
    std::uniform_int_distribution<int> shift(-3, 3);
    for (int i = 0; i < 20000; ++i) {
        const Point p = random_point();
        const auto tag = flow::classify_region(p, params);
        const int k = shift(rng);
        const Point shifted{p.x1 + k * flow::pi, p.x2 + k * flow::pi};
        CHECK(flow::classify_region(shifted, params) == tag);
        const Point swapped{p.x2, p.x1};
        CHECK(flow::classify_region(swapped, params) == tag);
    }
}

TEST_CASE("corner region grows with the angular cut") {
    const flow::FlowParams params{900.0, 1.0, 0.15, 0.30};
    flow::FlowParams fat = params;
    fat.beta0 = params.beta0_prime; // corners under beta0' as the inner cut
    fat.beta0_prime = 0.5;
    for (int i = 0; i < 20000; ++i) {
        const Point p = random_point();
        if (flow::in_fattened_corner(flow::classify_region(p, params)))
            CHECK(flow::in_corner(flow::classify_region(p, fat)));
    }
}

TEST_CASE("cell coordinates") {
    const auto c = flow::cell_of({flow::pi / 2, flow::pi / 2});
    CHECK(c.cell[0] == 0);
    CHECK(c.cell[1] == 0);
    CHECK(std::abs(c.h) <= 1.0);
    // separatrix points have h = 0 exactly up to sin rounding
    CHECK(std::abs(flow::cell_of({flow::pi, 2.3}).h) < 1e-15);
}

TEST_CASE("corner coordinates") {
    const auto [h1, th1] = flow::corner_coords({0.01, 0.01});
    CHECK(h1 == doctest::Approx(1e-4).epsilon(1e-4));
    CHECK(th1 == doctest::Approx(1.0).epsilon(1e-12));

    const auto [h2, th2] = flow::corner_coords({0.02, 0.01});
    CHECK(h2 == doctest::Approx(2e-4).epsilon(1e-3));
    CHECK(th2 < 1.0);
    CHECK(th2 == doctest::Approx(std::cos(0.02) / std::cos(0.01)).epsilon(1e-15));

    const auto [h3, th3] = flow::corner_coords({0.3, 0.3});
    CHECK(th3 == 1.0); // exact on the symmetry axis
    CHECK(h3 == doctest::Approx(std::sin(0.3) * std::sin(0.3)));

    CHECK_THROWS_AS(flow::corner_coords({flow::pi / 2, flow::pi / 2}), std::domain_error);
}

TEST_CASE("corner coordinates near a shifted lattice corner") {
    const auto [h, th] = flow::corner_coords({flow::pi + 0.05, 2 * flow::pi - 0.05});
    CHECK(th == doctest::Approx(1.0).epsilon(1e-12)); // symmetry axis again
    CHECK(h == doctest::Approx(std::sin(0.05) * std::sin(0.05)).epsilon(1e-10));
}
