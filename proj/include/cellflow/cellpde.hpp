#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellflow/flowfield.hpp"

// Finite-difference solves of the elliptic cell problems on one period
// (corrector / effective diffusivity, edge-exit probabilities, resolvent),
// plus pointwise residual verification of the explicit super-solutions.
//
// Advection is discretized in conservative flux form with first-order
// upwinding by default (monotone at any Peclet number; the analytic face
// velocities make the discrete face divergence vanish identically, so the
// periodic operator keeps constants in both null spaces). A deferred-
// correction van Leer limited second-order scheme is available where the
// upwind scheme's numerical diffusion is too coarse.
namespace cellflow::pde {

struct PeriodicGrid {
    int n = 128; // nodes per axis over [0, 2pi)

    double dx() const { return 2.0 * flow::pi / n; }
    void validate() const; // n >= 64 and even

    // Default resolution policy n = max(128, ceil(8 sqrt(A))), rounded even.
    static PeriodicGrid for_peclet(double A);
    PeriodicGrid refined() const { return PeriodicGrid{2 * n}; }
};

// Scalar field on a rectangular node lattice (either the full period or the
// closed cell Q0 = [0, pi]^2 for Dirichlet problems).
struct CellField {
    std::string name;
    int nx = 0, ny = 0;
    double x0 = 0.0, y0 = 0.0, dx = 0.0;
    std::vector<double> values; // row-major, index j*nx + i

    double& at(int i, int j) { return values[static_cast<std::size_t>(j) * nx + i]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(j) * nx + i]; }
    double x(int i) const { return x0 + i * dx; }
    double y(int j) const { return y0 + j * dx; }
    double min_value() const;
    double max_value() const;
    // Bilinear interpolation; p must lie inside the node lattice.
    double interp(flow::Point p) const;
};

struct SolverError : std::runtime_error {
    SolverError(const std::string& msg, double residual_)
        : std::runtime_error(msg), residual(residual_) {}
    double residual;
};

// Upwind1: first-order upwind fluxes (default; monotone at any Peclet).
// Limited2: deferred-correction van Leer limited second-order fluxes.
// ExpFit: exponentially fitted (Scharfetter-Gummel) fluxes; monotone, linear,
//         and exact for one-dimensional constant-coefficient layers, so it
//         resolves the boundary layers on much coarser grids.
enum class AdvectionScheme { Upwind1, Limited2, ExpFit };

struct SolveOptions {
    AdvectionScheme scheme = AdvectionScheme::Upwind1;
    double krylov_tol = 1e-10;      // relative residual for the Krylov solve
    int max_krylov_iters = 8000;
    double residual_target = 1e-8;  // absolute max-norm residual after refinement
    int max_refinements = 12;
    int dc_max_iters = 60;          // deferred-correction sweeps (Limited2)
    double dc_tol = 1e-7;           // defect target relative to |rhs|_inf
};

struct DeffMatrix {
    double d11 = 0.0, d22 = 0.0, d12 = 0.0;
};

struct ChiSolution {
    CellField chi1, chi2;   // zero-mean gauge
    DeffMatrix d_eff;
    double residual_max = 0.0; // discrete operator applied to chi minus RHS, both components
};

// Periodic cell problem  -lap(chi) + A v . grad(chi) = -A v  on [0, 2pi)^2,
// with D_eff = 2 I + (2/pi^2) int_{(0,pi)^2} grad(chi_i) . grad(chi_j).
ChiSolution solve_chi(double A, const PeriodicGrid& grid, const SolveOptions& opts = {});

struct DeffRichardson {
    DeffMatrix coarse, fine;
    int n_coarse = 0, n_fine = 0;
    double rel_diff = 0.0; // |D11_c - D11_f| / D11_f, worst diagonal entry
    bool validated = false; // rel_diff < 2%
};

// Solves at grid.n and 2*grid.n; flags the pair under-resolved when the
// diagonal D_eff entries move by 2% or more.
DeffRichardson deff_richardson(double A, const PeriodicGrid& grid, const SolveOptions& opts = {});

enum class Edge { South, East, North, West }; // x2=0, x1=pi, x2=pi, x1=0 sides of Q0

const char* to_string(Edge e);

// Dirichlet problem  -lap(z) + A v . grad(z) = 0  in Q0 = (0, pi)^2 with
// indicator boundary data on the chosen edge. Values lie in [0, 1]; the four
// fields sum to 1 within solver tolerance.
CellField solve_exit_probability(double A, Edge edge, const PeriodicGrid& grid,
                                 const SolveOptions& opts = {});

struct ResolventSolution {
    CellField phi;
    double lambda = 0.0;
    double sup_layer = 0.0; // sup of phi over {0 < h < delta} node set
};

// Dirichlet resolvent  -lap(phi) + A v . grad(phi) + lambda phi = 1 in Q0,
// phi = 0 on the boundary. The field obeys 0 <= phi <= 1/lambda; sup_layer
// is taken over B_delta^+ with delta = N/sqrt(A).
ResolventSolution solve_resolvent(double A, double lambda, const PeriodicGrid& grid,
                                  double N = 1.0, const SolveOptions& opts = {});

// ---------------------------------------------------------------------------
// Super-solution audits: evaluate the differential-inequality residual of the
// explicit candidates with exact derivatives on a dense sample of the
// candidate's region, and report the minimum.

enum class Supersolution {
    EdgeQuadratic,   // alpha (delta^2 - h^2) on the edge region; residual >= 1
    CornerG0G1,      // piecewise g0/g1(|x1|) on the fattened corner; residual >= 1
    ExitExponential, // exp(gamma2 A (theta - theta_hi)) on an edge component; residual >= 0
    PsiPlus,         // 1 - erf(h/(c0 sqrt(t))) on Q0 x (0, 1/8]; residual >= 0
    ResolventEdge,   // alpha h (2 eps - h), eps = 1/sqrt(alpha lambda); residual >= 1
};

const char* to_string(Supersolution s);

struct SupersolutionCandidate {
    Supersolution name;
    // Unset parameters are derived from the side conditions (see the report).
    std::optional<double> alpha;
    std::optional<double> gamma2;
    std::optional<double> c0;     // psi_plus scale, default 10
    std::optional<double> lambda; // resolvent_edge frequency, default sqrt(A)
};

struct ResidualReport {
    Supersolution name{};
    double required_level = 0.0;
    double min_residual = 0.0;
    flow::Point argmin;
    bool pass = false;
    std::size_t samples = 0;

    // Side-condition diagnostics (populated per candidate).
    double alpha = 0.0, gamma2 = 0.0, c0 = 0.0, lambda = 0.0;
    double xbar1 = 0.0, gamma0 = 0.0, a0 = 0.0;
    double exact_interior_value = 0.0; // corner: -18/(A xbar1^2) + 9, equals 1
    double glue_left = 0.0;            // corner: g0'(xbar1)
    double glue_right = 0.0;           // corner: g1'(xbar1) = -12/sqrt(A)
};

// `params` supplies N, beta0, beta0'; the Peclet number comes from `A`.
ResidualReport verify_supersolution(const SupersolutionCandidate& cand, double A,
                                    const flow::FlowParams& params, int samples_per_dim = 160);

// sup{x1 : x in the fattened corner component at the origin}; the angular
// cutoff is reached on the separatrix, so this is the root of the proxy-angle
// deviation along {x2 = 0}.
double corner_gamma0(double beta0_prime);

// Flat node record export: i, j, x1, x2, value.
void write_field_csv(std::ostream& out, const CellField& field);

} // namespace cellflow::pde
