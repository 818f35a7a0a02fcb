#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <utility>

// Exact analytic evaluation of the cellular flow: Hamiltonian h = sin(x1)sin(x2),
// velocity v = grad^perp(h), cell indexing, and classification of the
// boundary-layer / corner / edge regions used by the crossing instrumentation.
namespace cellflow::flow {

inline constexpr double pi = std::numbers::pi;

struct Point {
    double x1 = 0.0;
    double x2 = 0.0;
};

// Physical parameters of a run. A is the Peclet number (drift strength in the
// SDE dX = -A v dt + sqrt(2) dW); the boundary layer is {|h| < delta} with
// delta = N / sqrt(A). beta0 < beta0' are the angular half-widths of the
// corner and fattened-corner regions.
struct FlowParams {
    double A = 1000.0;
    double N = 1.0;
    double beta0 = 0.15;
    double beta0_prime = 0.30;

    double delta() const { return N / std::sqrt(A); }

    // Throws std::invalid_argument on violated invariants. A = 0 is allowed
    // (pure diffusion); the layer-based classification assumes A > 0.
    void validate() const;
};

// Per-cell coordinates: integer cell index (the cell (k pi,(k+1) pi) x (m pi,(m+1) pi)),
// the Hamiltonian value, and the angular proxy used for region classification
// (polar angle about the cell center, shifted by pi/4 so cell corners sit at
// multiples of pi/2, signed so it advances along the velocity orientation of
// the cell).
struct CellCoords {
    std::array<int, 2> cell{0, 0};
    double h = 0.0;
    double theta_proxy = 0.0;
};

enum class RegionTag {
    Interior,            // |h| >= delta
    EdgeLayer,           // in B_delta, angular distance to corners >= beta0'
    CornerLayer,         // in B_delta, angular distance < beta0
    FattenedCornerLayer, // in B_delta, beta0 <= angular distance < beta0'
};

double hamiltonian(Point p);
Point velocity(Point p);     // (-sin x1 cos x2, cos x1 sin x2)
Point grad_h(Point p);       // (cos x1 sin x2, sin x1 cos x2)
double laplacian_h(Point p); // == -2 h
double grad_h_norm_sq(Point p);

// Analytic divergence of v (identically zero; exposed for verification).
double velocity_divergence(Point p);

CellCoords cell_of(Point p);

// Angular distance of the cell-centered proxy angle to the nearest corner
// direction (multiples of pi/2); in [0, pi/4].
double corner_angle_distance(Point p);

RegionTag classify_region(Point p, const FlowParams& params);

// Membership helpers for the paper's four region families.
inline bool in_layer(RegionTag t) { return t != RegionTag::Interior; }
inline bool in_corner(RegionTag t) { return t == RegionTag::CornerLayer; }
inline bool in_fattened_corner(RegionTag t) {
    return t == RegionTag::CornerLayer || t == RegionTag::FattenedCornerLayer;
}
// Edge region E = B_delta minus the (closed) corner region.
inline bool in_edge(RegionTag t) {
    return t == RegionTag::EdgeLayer || t == RegionTag::FattenedCornerLayer;
}
// Shrunken edge region E' = B_delta minus the fattened corner region.
inline bool in_edge_prime(RegionTag t) { return t == RegionTag::EdgeLayer; }

// Nearest lattice corner (k pi, m pi) to p.
std::array<int, 2> nearest_corner(Point p);

// Local corner coordinates: exact h and the explicit corner angular
// coordinate cos(u) / cos(v) where (u, v) = p translated to the nearest
// lattice corner. Requires |p - corner| <= pi/4 (throws std::domain_error).
std::pair<double, double> corner_coords(Point p);

} // namespace cellflow::flow
