#include "cellflow/flowfield.hpp"

#include <stdexcept>

namespace cellflow::flow {

void FlowParams::validate() const {
    if (!(A >= 0.0)) throw std::invalid_argument("FlowParams: A must be >= 0");
    if (!(N > 0.0)) throw std::invalid_argument("FlowParams: N must be > 0");
    if (!(beta0 > 0.0 && beta0 < beta0_prime && beta0_prime < pi / 4))
        throw std::invalid_argument("FlowParams: need 0 < beta0 < beta0' < pi/4");
    if (A > 0.0 && !(delta() < 1.0))
        throw std::invalid_argument("FlowParams: delta = N/sqrt(A) must be < 1");
}

double hamiltonian(Point p) { return std::sin(p.x1) * std::sin(p.x2); }

Point velocity(Point p) {
    return {-std::sin(p.x1) * std::cos(p.x2), std::cos(p.x1) * std::sin(p.x2)};
}

Point grad_h(Point p) {
    return {std::cos(p.x1) * std::sin(p.x2), std::sin(p.x1) * std::cos(p.x2)};
}

double laplacian_h(Point p) { return -2.0 * hamiltonian(p); }

double grad_h_norm_sq(Point p) {
    const Point g = grad_h(p);
    return g.x1 * g.x1 + g.x2 * g.x2;
}

double velocity_divergence(Point p) {
    // d/dx1 (-sin x1 cos x2) + d/dx2 (cos x1 sin x2); cancels analytically.
    return -std::cos(p.x1) * std::cos(p.x2) + std::cos(p.x1) * std::cos(p.x2);
}

CellCoords cell_of(Point p) {
    CellCoords c;
    c.cell[0] = static_cast<int>(std::floor(p.x1 / pi));
    c.cell[1] = static_cast<int>(std::floor(p.x2 / pi));
    c.h = hamiltonian(p);
    const double c1 = (c.cell[0] + 0.5) * pi;
    const double c2 = (c.cell[1] + 0.5) * pi;
    const double sign = ((c.cell[0] + c.cell[1]) % 2 == 0) ? 1.0 : -1.0;
    c.theta_proxy = sign * (std::atan2(p.x2 - c2, p.x1 - c1) + pi / 4);
    return c;
}

double corner_angle_distance(Point p) {
    const double theta = cell_of(p).theta_proxy;
    return std::abs(std::remainder(theta, pi / 2));
}

RegionTag classify_region(Point p, const FlowParams& params) {
    if (std::abs(hamiltonian(p)) >= params.delta()) return RegionTag::Interior;
    const double d = corner_angle_distance(p);
    if (d < params.beta0) return RegionTag::CornerLayer;
    if (d < params.beta0_prime) return RegionTag::FattenedCornerLayer;
    return RegionTag::EdgeLayer;
}

std::array<int, 2> nearest_corner(Point p) {
    return {static_cast<int>(std::lround(p.x1 / pi)),
            static_cast<int>(std::lround(p.x2 / pi))};
}

std::pair<double, double> corner_coords(Point p) {
    const auto c = nearest_corner(p);
    const double u = p.x1 - c[0] * pi;
    const double v = p.x2 - c[1] * pi;
    if (std::hypot(u, v) > pi / 4)
        throw std::domain_error("corner_coords: point is not within pi/4 of a lattice corner");
    return {hamiltonian(p), std::cos(u) / std::cos(v)};
}

} // namespace cellflow::flow
