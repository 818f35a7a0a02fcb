#include "cellflow/cellpde.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>

namespace cellflow::pde {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Trip = Eigen::Triplet<double>;

double v1(double x, double y) { return -std::sin(x) * std::cos(y); }
double v2(double x, double y) { return std::cos(x) * std::sin(y); }

double pos_part(double a) { return a > 0.0 ? a : 0.0; }

// Bernoulli function z / (e^z - 1), stable near 0.
double bernoulli(double z) {
    if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z + z * z / 12.0;
    return z / std::expm1(z);
}

// Total face flux (advection + diffusion) between nodes L and R a distance h
// apart with face velocity u, written J = (a phi_L - b phi_R) / h. Both
// schemes are monotone (a, b >= 0), consistent (a - b = u h), and in flux
// form, so row sums reduce to the (identically zero) discrete face
// divergence of v and column sums telescope to zero.
struct FaceCoef {
    double a, b;
};

FaceCoef face_coef(double u, double h, AdvectionScheme scheme) {
    const double z = u * h;
    if (scheme == AdvectionScheme::ExpFit) return {bernoulli(-z), bernoulli(z)};
    // first-order upwind advection plus centered diffusion (also the solved
    // operator under the Limited2 deferred correction)
    return {1.0 + pos_part(z), 1.0 + pos_part(-z)};
}

// Conservative stencil row at (x, y) from the four face fluxes.
struct StencilRow {
    double c, e, w, n, s;
};

StencilRow stencil_row(double A, double x, double y, double h, double lambda,
                       AdvectionScheme scheme) {
    const FaceCoef fe = face_coef(A * v1(x + 0.5 * h, y), h, scheme);
    const FaceCoef fw = face_coef(A * v1(x - 0.5 * h, y), h, scheme);
    const FaceCoef fn = face_coef(A * v2(x, y + 0.5 * h), h, scheme);
    const FaceCoef fs = face_coef(A * v2(x, y - 0.5 * h), h, scheme);
    const double ih2 = 1.0 / (h * h);
    return {(fe.a + fw.b + fn.a + fs.b) * ih2 + lambda, -fe.b * ih2, -fw.a * ih2, -fn.b * ih2,
            -fs.a * ih2};
}

double van_leer(double r) { return (r + std::abs(r)) / (1.0 + std::abs(r)); }

// Limited MUSCL face value for flux u*phi at the face between `up` (upwind
// cell for u > 0) and `dn`. `upup` is the next cell behind the upwind one.
double muscl_face(double phi_upup, double phi_up, double phi_dn) {
    const double d = phi_dn - phi_up;
    if (d == 0.0) return phi_up;
    const double r = (phi_up - phi_upup) / d;
    return phi_up + 0.5 * van_leer(r) * d;
}

struct KrylovSolver {
    Eigen::BiCGSTAB<SpMat, Eigen::IncompleteLUT<double>> impl;

    KrylovSolver(const SpMat& M, const SolveOptions& opts) {
        impl.preconditioner().setDroptol(1e-4);
        impl.preconditioner().setFillfactor(12);
        impl.setTolerance(opts.krylov_tol);
        impl.setMaxIterations(opts.max_krylov_iters);
        impl.compute(M);
        if (impl.info() != Eigen::Success)
            throw SolverError("cellpde: preconditioner factorization failed", -1.0);
    }

    // Solve to an absolute max-norm residual target with defect correction.
    Vec solve_refined(const SpMat& M, const Vec& b, const SolveOptions& opts) {
        Vec x = impl.solve(b);
        if (impl.info() != Eigen::Success && impl.info() != Eigen::NoConvergence)
            throw SolverError("cellpde: Krylov solve failed", -1.0);
        double res = 0.0;
        for (int pass = 0; pass <= opts.max_refinements; ++pass) {
            const Vec r = b - M * x;
            res = r.lpNorm<Eigen::Infinity>();
            if (res <= opts.residual_target) return x;
            x += impl.solve(r);
        }
        throw SolverError("cellpde: Krylov solve did not reach the residual target", res);
    }
};

// ---------------------------------------------------------------------------
// The periodic corrector problem, reduced to a quarter period.
//
// The generator -lap + A v.grad commutes with the reflections x1 -> -x1
// (under which v1 is odd and the RHS -A v1 flips sign) and x2 -> -x2 (under
// which both are even), so chi1 is odd in x1 and even in x2, about 0 and
// about pi. It therefore solves a Dirichlet(x1) x Neumann(x2) problem on
// [0, pi]^2, a quarter of the unknowns and a nonsingular system. chi2
// follows from the swap-plus-shift symmetry: chi2(x1, x2) = -chi1(pi - x2, x1).

// Unknowns: i = 1..m-1 (chi = 0 at i = 0, m), j = 0..m (reflected ghosts).
// Stored as 5 diagonals plus the source; at j = 0 and j = m the mirrored
// neighbor folds into the opposite coefficient, keeping the pattern.
struct QuarterSystem {
    int m = 0;
    double h = 0.0;
    int nx = 0, ny = 0; // nx = m-1, ny = m+1
    std::vector<double> ad, ae, aw, an, as_;

    int idx(int i, int j) const { return j * nx + (i - 1); }
    int size() const { return nx * ny; }
};

QuarterSystem assemble_quarter(double A, const PeriodicGrid& grid, AdvectionScheme scheme) {
    const AdvectionScheme solved =
        scheme == AdvectionScheme::Limited2 ? AdvectionScheme::Upwind1 : scheme;
    QuarterSystem q;
    q.m = grid.n / 2;
    q.h = grid.dx();
    q.nx = q.m - 1;
    q.ny = q.m + 1;
    const int n = q.size();
    q.ad.assign(n, 0.0);
    q.ae.assign(n, 0.0);
    q.aw.assign(n, 0.0);
    q.an.assign(n, 0.0);
    q.as_.assign(n, 0.0);
    const double ih2 = 1.0 / (q.h * q.h);
    for (int j = 0; j <= q.m; ++j) {
        for (int i = 1; i < q.m; ++i) {
            const double x = i * q.h, y = j * q.h;
            const FaceCoef fe = face_coef(A * v1(x + 0.5 * q.h, y), q.h, solved);
            const FaceCoef fw = face_coef(A * v1(x - 0.5 * q.h, y), q.h, solved);
            const FaceCoef fn = face_coef(A * v2(x, y + 0.5 * q.h), q.h, solved);
            const FaceCoef fs = face_coef(A * v2(x, y - 0.5 * q.h), q.h, solved);
            const int p = q.idx(i, j);
            q.ad[p] = (fe.a + fw.b + fn.a + fs.b) * ih2;
            q.ae[p] = -fe.b * ih2;
            q.aw[p] = -fw.a * ih2;
            q.an[p] = -fn.b * ih2;
            q.as_[p] = -fs.a * ih2;
            if (j == 0) { // south ghost (i, -1) == (i, 1)
                q.an[p] += q.as_[p];
                q.as_[p] = 0.0;
            }
            if (j == q.m) { // north ghost (i, m+1) == (i, m-1)
                q.as_[p] += q.an[p];
                q.an[p] = 0.0;
            }
            // i = 1 and i = m-1 reference Dirichlet zeros; drop the links
            if (i == 1) q.aw[p] = 0.0;
            if (i == q.m - 1) q.ae[p] = 0.0;
        }
    }
    return q;
}

void quarter_spmv(const QuarterSystem& q, const double* x, double* out) {
    const int nx = q.nx;
    for (int j = 0; j < q.ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int p = j * nx + i;
            double v = q.ad[p] * x[p];
            if (i > 0) v += q.aw[p] * x[p - 1];
            if (i + 1 < nx) v += q.ae[p] * x[p + 1];
            if (j > 0) v += q.as_[p] * x[p - nx];
            if (j + 1 < q.ny) v += q.an[p] * x[p + nx];
            out[p] = v;
        }
    }
}

// Alternating-line Gauss-Seidel preconditioner: one application sweeps all
// x-lines (tridiagonal solves, ascending j) then all y-lines (ascending i).
// The line solves follow the advection along whole edge legs of the
// recirculating cell, which pointwise or ILU(0) preconditioning cannot.
struct LineSweeper {
    const QuarterSystem* q;
    // Prefactored Thomas coefficients: row-wise over (aw, ad, ae) and
    // column-wise over (as_, ad, an).
    std::vector<double> row_piv, row_sup, col_piv, col_sup;

    explicit LineSweeper(const QuarterSystem& sys) : q(&sys) {
        const int nx = q->nx, ny = q->ny;
        row_piv.resize(q->size());
        row_sup.resize(q->size());
        col_piv.resize(q->size());
        col_sup.resize(q->size());
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                const int p = j * nx + i;
                double piv = q->ad[p];
                if (i > 0) piv -= q->aw[p] * row_sup[p - 1];
                row_piv[p] = piv;
                row_sup[p] = (i + 1 < nx) ? q->ae[p] / piv : 0.0;
            }
        }
        for (int i = 0; i < nx; ++i) {
            for (int j = 0; j < ny; ++j) {
                const int p = j * nx + i;
                double piv = q->ad[p];
                if (j > 0) piv -= q->as_[p] * col_sup[p - nx];
                col_piv[p] = piv;
                col_sup[p] = (j + 1 < ny) ? q->an[p] / piv : 0.0;
            }
        }
    }

    void solve(const double* r, double* z) const {
        const int nx = q->nx, ny = q->ny;
        // x-line sweep, ascending j; rows above are still zero
        for (int j = 0; j < ny; ++j) {
            const int base = j * nx;
            for (int i = 0; i < nx; ++i) {
                const int p = base + i;
                double rhs = r[p];
                if (j > 0) rhs -= q->as_[p] * z[p - nx];
                if (i > 0) rhs -= q->aw[p] * z[p - 1];
                z[p] = rhs / row_piv[p];
            }
            for (int i = nx - 2; i >= 0; --i) {
                const int p = base + i;
                z[p] -= row_sup[p] * z[p + 1];
            }
        }
        // y-line sweep, ascending i, Gauss-Seidel on the freshly updated z
        for (int i = 0; i < nx; ++i) {
            for (int j = 0; j < ny; ++j) {
                const int p = j * nx + i;
                double rhs = r[p];
                if (i > 0) rhs -= q->aw[p] * z[p - 1];
                if (i + 1 < nx) rhs -= q->ae[p] * z[p + 1];
                if (j > 0) rhs -= q->as_[p] * z[p - nx];
                z[p] = rhs / col_piv[p];
            }
            for (int j = ny - 2; j >= 0; --j) {
                const int p = j * nx + i;
                z[p] -= col_sup[p] * z[p + nx];
            }
        }
    }
};

// Preconditioned BiCGStab on the structured system with stagnation restarts;
// returns the achieved max-norm residual.
double quarter_bicgstab(const QuarterSystem& q, const LineSweeper& ilu, const Vec& b, Vec& x,
                        double abs_target, int max_iters) {
    const int n = q.size();
    Vec r(n), r0(n), p(n), ph(n), v(n), s(n), sh(n), t(n);
    if (x.size() != n) x = Vec::Zero(n);
    if (b.lpNorm<Eigen::Infinity>() == 0.0) {
        x.setZero();
        return 0.0;
    }
    quarter_spmv(q, x.data(), r.data());
    r = b - r;
    double rho = 1.0, alpha = 1.0, omega = 1.0;
    r0 = r;
    p.setZero();
    v.setZero();
    double res = r.lpNorm<Eigen::Infinity>();
    double best = res;
    int since_best = 0;
    for (int it = 0; it < max_iters && res > abs_target; ++it) {
        const double rho_new = r0.dot(r);
        const bool breakdown = std::abs(rho_new) < 1e-300;
        if (breakdown || since_best >= 150) {
            // restart on Lanczos breakdown or stagnation
            quarter_spmv(q, x.data(), r.data());
            r = b - r;
            r0 = r;
            p.setZero();
            v.setZero();
            rho = alpha = omega = 1.0;
            res = r.lpNorm<Eigen::Infinity>();
            best = res;
            since_best = 0;
            if (res <= abs_target) break;
            continue;
        }
        const double beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p = r + beta * (p - omega * v);
        ilu.solve(p.data(), ph.data());
        quarter_spmv(q, ph.data(), v.data());
        alpha = rho / r0.dot(v);
        s = r - alpha * v;
        if (s.lpNorm<Eigen::Infinity>() <= abs_target) {
            x += alpha * ph;
            quarter_spmv(q, x.data(), r.data());
            r = b - r;
            res = r.lpNorm<Eigen::Infinity>();
        } else {
            ilu.solve(s.data(), sh.data());
            quarter_spmv(q, sh.data(), t.data());
            const double tt = t.dot(t);
            if (tt == 0.0) break;
            omega = t.dot(s) / tt;
            x += alpha * ph + omega * sh;
            r = s - omega * t;
            res = r.lpNorm<Eigen::Infinity>();
        }
        if (res < 0.98 * best) {
            best = res;
            since_best = 0;
        } else {
            ++since_best;
        }
    }
    // one true-residual refresh; the recursion can drift
    quarter_spmv(q, x.data(), r.data());
    r = b - r;
    return r.lpNorm<Eigen::Infinity>();
}

// Limited2 defect operator on the quarter domain, with symmetry ghosts:
// chi(-i) = -chi(i), chi(m + k) = -chi(m - k) in x1; mirrors in x2.
Vec quarter_apply_limited(const QuarterSystem& q, double A, const Vec& x) {
    const int m = q.m, nx = q.nx;
    const double h = q.h;
    const auto val = [&](int i, int j) -> double {
        double sign = 1.0;
        if (i < 0) {
            i = -i;
            sign = -sign;
        }
        if (i > m) {
            i = 2 * m - i;
            sign = -sign;
        }
        if (i == 0 || i == m) return 0.0;
        if (j < 0) j = -j;
        if (j > m) j = 2 * m - j;
        return sign * x[j * nx + (i - 1)];
    };
    Vec out(q.size());
    for (int j = 0; j <= m; ++j) {
        for (int i = 1; i < m; ++i) {
            const double xc = i * h, yc = j * h;
            const double pc = val(i, j);
            const double pe = val(i + 1, j), pw = val(i - 1, j);
            const double pn = val(i, j + 1), ps = val(i, j - 1);
            const double pee = val(i + 2, j), pww = val(i - 2, j);
            const double pnn = val(i, j + 2), pss = val(i, j - 2);
            const double lap = (pe + pw + pn + ps - 4.0 * pc) / (h * h);
            const double fue = A * v1(xc + 0.5 * h, yc), fuw = A * v1(xc - 0.5 * h, yc);
            const double fvn = A * v2(xc, yc + 0.5 * h), fvs = A * v2(xc, yc - 0.5 * h);
            const double fe =
                fue >= 0.0 ? fue * muscl_face(pw, pc, pe) : fue * muscl_face(pee, pe, pc);
            const double fw =
                fuw >= 0.0 ? fuw * muscl_face(pww, pw, pc) : fuw * muscl_face(pe, pc, pw);
            const double fn =
                fvn >= 0.0 ? fvn * muscl_face(ps, pc, pn) : fvn * muscl_face(pnn, pn, pc);
            const double fs =
                fvs >= 0.0 ? fvs * muscl_face(pss, ps, pc) : fvs * muscl_face(pn, pc, ps);
            out[j * nx + (i - 1)] = -lap + (fe - fw + fn - fs) / h;
        }
    }
    return out;
}

// Solves the quarter corrector system for chi1 and reports the achieved
// residual of the requested scheme's operator.
Vec solve_quarter_chi(double A, const PeriodicGrid& grid, const SolveOptions& opts,
                      double* residual_out) {
    const QuarterSystem q = assemble_quarter(A, grid, opts.scheme);
    const LineSweeper ilu(q);
    Vec b(q.size());
    for (int j = 0; j <= q.m; ++j)
        for (int i = 1; i < q.m; ++i) b[q.idx(i, j)] = -A * v1(i * q.h, j * q.h);

    const double b_scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
    Vec x = Vec::Zero(q.size());
    double res = quarter_bicgstab(q, ilu, b, x, opts.residual_target, opts.max_krylov_iters);
    if (!(res <= std::max(opts.residual_target, opts.krylov_tol * b_scale)))
        throw SolverError("cellpde: quarter-domain Krylov solve stalled", res);

    if (opts.scheme == AdvectionScheme::Limited2) {
        const double target = opts.dc_tol * (1.0 + b_scale);
        double rho_norm = 0.0;
        Vec d = Vec::Zero(q.size());
        for (int it = 0; it < opts.dc_max_iters; ++it) {
            Vec rho = b - quarter_apply_limited(q, A, x);
            rho_norm = rho.lpNorm<Eigen::Infinity>();
            if (rho_norm <= target || !std::isfinite(rho_norm)) break;
            d.setZero();
            quarter_bicgstab(q, ilu, rho, d, 0.05 * rho_norm, opts.max_krylov_iters);
            x += d;
        }
        if (!std::isfinite(rho_norm))
            throw SolverError("cellpde: deferred correction diverged", rho_norm);
        res = rho_norm;
    }
    if (residual_out) *residual_out = res;
    return x;
}

// Signed lookup into the quarter solution extended by its symmetries.
struct QuarterField {
    int m = 0;
    const Vec* x = nullptr;

    double operator()(int i, int j) const {
        const int period = 2 * m;
        i %= period;
        if (i < 0) i += period;
        j %= period;
        if (j < 0) j += period;
        double sign = 1.0;
        if (i > m) {
            i = period - i;
            sign = -sign;
        }
        if (j > m) j = period - j;
        if (i == 0 || i == m) return 0.0;
        return sign * (*x)[j * (m - 1) + (i - 1)];
    }
};

// ---------------------------------------------------------------------------
// Dirichlet problems on Q0 = (0, pi)^2.

// Boundary data for the edge-exit problems; corners are excluded (they are
// never referenced by the interior stencil).
double edge_indicator(Edge e, double x, double y, double eps) {
    switch (e) {
    case Edge::South: return (y < eps && x > eps && x < flow::pi - eps) ? 1.0 : 0.0;
    case Edge::North: return (y > flow::pi - eps && x > eps && x < flow::pi - eps) ? 1.0 : 0.0;
    case Edge::West: return (x < eps && y > eps && y < flow::pi - eps) ? 1.0 : 0.0;
    case Edge::East: return (x > flow::pi - eps && y > eps && y < flow::pi - eps) ? 1.0 : 0.0;
    }
    return 0.0;
}

struct DirichletSystem {
    int m; // intervals per side; interior nodes (m-1)^2
    double h;
    SpMat M;
    Vec b;
};

template <typename BoundaryFn, typename SourceFn>
DirichletSystem assemble_dirichlet(double A, const PeriodicGrid& grid, double lambda,
                                   AdvectionScheme scheme, const BoundaryFn& g,
                                   const SourceFn& f) {
    if (scheme == AdvectionScheme::Limited2)
        throw std::invalid_argument(
            "cellpde: Dirichlet solves support upwind1 or expfit advection");
    const int m = grid.n / 2;
    const double h = grid.dx();
    const int nu = (m - 1) * (m - 1);
    const auto idx = [m](int i, int j) { return (j - 1) * (m - 1) + (i - 1); };

    std::vector<Trip> trips;
    trips.reserve(static_cast<std::size_t>(nu) * 5);
    Vec b(nu);
    for (int j = 1; j < m; ++j) {
        for (int i = 1; i < m; ++i) {
            const double x = i * h, y = j * h;
            const StencilRow r = stencil_row(A, x, y, h, lambda, scheme);
            const int row = idx(i, j);
            b[row] = f(x, y);
            trips.emplace_back(row, row, r.c);
            const auto nb = [&](int ii, int jj, double coef) {
                if (ii <= 0 || ii >= m || jj <= 0 || jj >= m)
                    b[row] -= coef * g(ii * h, jj * h);
                else
                    trips.emplace_back(row, idx(ii, jj), coef);
            };
            nb(i + 1, j, r.e);
            nb(i - 1, j, r.w);
            nb(i, j + 1, r.n);
            nb(i, j - 1, r.s);
        }
    }
    DirichletSystem sys{m, h, SpMat(nu, nu), std::move(b)};
    sys.M.setFromTriplets(trips.begin(), trips.end());
    return sys;
}

template <typename BoundaryFn>
CellField dirichlet_field(const DirichletSystem& sys, const Vec& x, const BoundaryFn& g,
                          std::string name) {
    CellField field;
    field.name = std::move(name);
    field.nx = field.ny = sys.m + 1;
    field.x0 = field.y0 = 0.0;
    field.dx = sys.h;
    field.values.assign(static_cast<std::size_t>(field.nx) * field.ny, 0.0);
    for (int j = 0; j <= sys.m; ++j) {
        for (int i = 0; i <= sys.m; ++i) {
            if (i == 0 || i == sys.m || j == 0 || j == sys.m)
                field.at(i, j) = g(i * sys.h, j * sys.h);
            else
                field.at(i, j) = x[(j - 1) * (sys.m - 1) + (i - 1)];
        }
    }
    return field;
}

} // namespace

void PeriodicGrid::validate() const {
    if (n < 64 || n % 2 != 0)
        throw std::invalid_argument("PeriodicGrid: n must be even and >= 64");
}

PeriodicGrid PeriodicGrid::for_peclet(double A) {
    int n = std::max(128, static_cast<int>(std::ceil(8.0 * std::sqrt(std::max(A, 0.0)))));
    if (n % 2 != 0) ++n;
    return PeriodicGrid{n};
}

double CellField::min_value() const { return *std::min_element(values.begin(), values.end()); }
double CellField::max_value() const { return *std::max_element(values.begin(), values.end()); }

double CellField::interp(flow::Point p) const {
    const double fi = (p.x1 - x0) / dx;
    const double fj = (p.x2 - y0) / dx;
    const int i = std::clamp(static_cast<int>(std::floor(fi)), 0, nx - 2);
    const int j = std::clamp(static_cast<int>(std::floor(fj)), 0, ny - 2);
    const double a = std::clamp(fi - i, 0.0, 1.0);
    const double b = std::clamp(fj - j, 0.0, 1.0);
    return (1 - a) * (1 - b) * at(i, j) + a * (1 - b) * at(i + 1, j) +
           (1 - a) * b * at(i, j + 1) + a * b * at(i + 1, j + 1);
}

const char* to_string(Edge e) {
    switch (e) {
    case Edge::South: return "south";
    case Edge::East: return "east";
    case Edge::North: return "north";
    case Edge::West: return "west";
    }
    return "?";
}

ChiSolution solve_chi(double A, const PeriodicGrid& grid, const SolveOptions& opts) {
    grid.validate();
    if (A < 0.0) throw std::invalid_argument("solve_chi: A must be >= 0");
    const int n = grid.n, m = n / 2;
    const double h = grid.dx();

    ChiSolution sol;
    const Vec x = solve_quarter_chi(A, grid, opts, &sol.residual_max);
    const QuarterField q{m, &x};

    // D_eff = 2 I + (2/pi^2) int_{(0,pi)^2} grad(chi_i) . grad(chi_j);
    // centered gradients across the symmetry extension, trapezoidal weights.
    // chi2(x1, x2) = -chi1(pi - x2, x1), so D22 = D11 exactly and the cross
    // gradients are index remaps of the chi1 ones.
    const auto g1x = [&](int i, int j) { return (q(i + 1, j) - q(i - 1, j)) / (2 * h); };
    const auto g1y = [&](int i, int j) { return (q(i, j + 1) - q(i, j - 1)) / (2 * h); };
    double acc11 = 0.0, acc12 = 0.0;
    for (int j = 0; j <= m; ++j) {
        const double wj = (j == 0 || j == m) ? 0.5 : 1.0;
        for (int i = 0; i <= m; ++i) {
            const double wi = (i == 0 || i == m) ? 0.5 : 1.0;
            const double gx = g1x(i, j), gy = g1y(i, j);
            acc11 += wi * wj * (gx * gx + gy * gy);
            acc12 += wi * wj * (gx * -g1y(m - j, i) + gy * g1x(m - j, i));
        }
    }
    const double scale = 2.0 / (flow::pi * flow::pi) * h * h;
    sol.d_eff = {2.0 + scale * acc11, 2.0 + scale * acc11, scale * acc12};

    for (int k = 0; k < 2; ++k) {
        CellField& f = (k == 0) ? sol.chi1 : sol.chi2;
        f.name = (k == 0) ? "chi1" : "chi2";
        f.nx = f.ny = n;
        f.x0 = f.y0 = 0.0;
        f.dx = h;
        f.values.resize(static_cast<std::size_t>(n) * n);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i)
                f.values[static_cast<std::size_t>(j) * n + i] =
                    (k == 0) ? q(i, j) : -q(m - j, i);
    }
    return sol;
}

DeffRichardson deff_richardson(double A, const PeriodicGrid& grid, const SolveOptions& opts) {
    DeffRichardson out;
    out.n_coarse = grid.n;
    out.n_fine = 2 * grid.n;
    out.coarse = solve_chi(A, grid, opts).d_eff;
    out.fine = solve_chi(A, grid.refined(), opts).d_eff;
    const double d1 = std::abs(out.coarse.d11 - out.fine.d11) / std::abs(out.fine.d11);
    const double d2 = std::abs(out.coarse.d22 - out.fine.d22) / std::abs(out.fine.d22);
    out.rel_diff = std::max(d1, d2);
    out.validated = out.rel_diff < 0.02;
    return out;
}

CellField solve_exit_probability(double A, Edge edge, const PeriodicGrid& grid,
                                 const SolveOptions& opts) {
    grid.validate();
    if (A < 0.0) throw std::invalid_argument("solve_exit_probability: A must be >= 0");
    const double eps = 0.25 * grid.dx();
    const auto g = [edge, eps](double x, double y) { return edge_indicator(edge, x, y, eps); };
    auto sys = assemble_dirichlet(A, grid, 0.0, opts.scheme, g, [](double, double) { return 0.0; });
    KrylovSolver solver(sys.M, opts);
    const Vec x = solver.solve_refined(sys.M, sys.b, opts);
    return dirichlet_field(sys, x, g, std::string("zeta_") + to_string(edge));
}

ResolventSolution solve_resolvent(double A, double lambda, const PeriodicGrid& grid, double N,
                                  const SolveOptions& opts) {
    grid.validate();
    if (!(lambda > 0.0)) throw std::invalid_argument("solve_resolvent: lambda must be > 0");
    if (A < 0.0) throw std::invalid_argument("solve_resolvent: A must be >= 0");
    const auto g = [](double, double) { return 0.0; };
    auto sys = assemble_dirichlet(A, grid, lambda, opts.scheme, g, [](double, double) { return 1.0; });
    KrylovSolver solver(sys.M, opts);
    const Vec x = solver.solve_refined(sys.M, sys.b, opts);

    ResolventSolution out;
    out.lambda = lambda;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "resolvent(lambda=%g)", lambda);
    out.phi = dirichlet_field(sys, x, g, buf);

    const double delta = (A > 0.0) ? N / std::sqrt(A) : 1.0;
    out.sup_layer = 0.0;
    for (int j = 1; j < sys.m; ++j)
        for (int i = 1; i < sys.m; ++i) {
            const double hval = flow::hamiltonian({i * sys.h, j * sys.h});
            if (hval > 0.0 && hval < delta)
                out.sup_layer = std::max(out.sup_layer, out.phi.at(i, j));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Super-solution audits.

namespace {

// Proxy-angle deviation from the corner direction along the separatrix edge
// {x2 = 0}, increasing in x1 on (0, pi/2).
double edge_angle_deviation(double x1) {
    return flow::corner_angle_distance({x1, 0.0});
}

double solve_deviation_root(double target) {
    double lo = 1e-9, hi = flow::pi / 2 - 1e-9;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (edge_angle_deviation(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct Sampler {
    std::mt19937 rng{0x5eed1234u};
    double uniform(double a, double b) {
        return a + (b - a) * std::generate_canonical<double, 32>(rng);
    }
};

void track_min(ResidualReport& rep, double value, flow::Point p) {
    if (rep.samples == 0 || value < rep.min_residual) {
        rep.min_residual = value;
        rep.argmin = p;
    }
    ++rep.samples;
}

} // namespace

double corner_gamma0(double beta0_prime) { return solve_deviation_root(beta0_prime); }

const char* to_string(Supersolution s) {
    switch (s) {
    case Supersolution::EdgeQuadratic: return "edge_quadratic";
    case Supersolution::CornerG0G1: return "corner_g0g1";
    case Supersolution::ExitExponential: return "exit_exponential";
    case Supersolution::PsiPlus: return "psi_plus";
    case Supersolution::ResolventEdge: return "resolvent_edge";
    }
    return "?";
}

ResidualReport verify_supersolution(const SupersolutionCandidate& cand, double A,
                                    const flow::FlowParams& params_in, int samples_per_dim) {
    if (!(A > 0.0)) throw std::invalid_argument("verify_supersolution: A must be > 0");
    flow::FlowParams params = params_in;
    params.A = A;
    params.validate();
    const double delta = params.delta();
    const int nsamp = samples_per_dim;
    Sampler smp;

    ResidualReport rep;
    rep.name = cand.name;

    // Draws points in the edge family of components along {x2 = 0}: x1 in
    // (0, pi), h in [h_lo, h_hi] layer levels, x2 = asin(h / sin x1).
    // The vertical-edge components are images under the coordinate swap, and
    // every residual below is swap-invariant.
    const auto sample_edge_strip = [&](const flow::FlowParams& cls, double h_lo, double h_hi,
                                       auto&& visit) {
        for (int a = 0; a < nsamp; ++a) {
            for (int b = 0; b < nsamp; ++b) {
                const double x1 = smp.uniform(1e-3, flow::pi - 1e-3);
                const double h = smp.uniform(h_lo, h_hi);
                const double s = std::sin(x1);
                if (std::abs(h) >= s) continue;
                const flow::Point p{x1, std::asin(h / s)};
                if (!flow::in_edge(flow::classify_region(p, cls))) continue;
                visit(p);
            }
        }
    };

    switch (cand.name) {
    case Supersolution::EdgeQuadratic: {
        // phi_e = alpha (delta^2 - h^2); residual 2 alpha (|grad h|^2 - 2 h^2) >= 1.
        // The default alpha comes from the A-independent floor of |grad h|
        // on the edge region: sin(x1) at the corner-side angular cutoff.
        rep.required_level = 1.0;
        const double x1min = solve_deviation_root(params.beta0);
        const double floor_sq = std::sin(x1min) * std::sin(x1min);
        rep.alpha = cand.alpha.value_or(1.25 / (2.0 * floor_sq));
        sample_edge_strip(params, -delta, delta, [&](flow::Point p) {
            const double hv = flow::hamiltonian(p);
            const double res = 2.0 * rep.alpha * (flow::grad_h_norm_sq(p) - 2.0 * hv * hv);
            track_min(rep, res, p);
        });
        break;
    }
    case Supersolution::CornerG0G1: {
        // Piecewise bar-phi_c(|x1|) on the fattened corner component at the
        // origin: g0 = a0 - x1^2/2 inside |x1| <= xbar1 = 3/(2 sqrt A),
        // g1 = (18/A) ln(gamma0/x1) outside; residual >= 1.
        rep.required_level = 1.0;
        rep.xbar1 = 1.5 / std::sqrt(A);
        rep.gamma0 = corner_gamma0(params.beta0_prime);
        rep.a0 = 18.0 / A * std::log(rep.gamma0 / rep.xbar1) + 0.5 * rep.xbar1 * rep.xbar1;
        rep.exact_interior_value = -18.0 / (A * rep.xbar1 * rep.xbar1) + 9.0;
        rep.glue_left = -rep.xbar1;                 // g0'(xbar1)
        rep.glue_right = -18.0 / (A * rep.xbar1);   // g1'(xbar1) = -12/sqrt(A)
        for (int a = 0; a < nsamp; ++a) {
            for (int b = 0; b < nsamp; ++b) {
                const flow::Point p{smp.uniform(-rep.gamma0, rep.gamma0),
                                    smp.uniform(-rep.gamma0, rep.gamma0)};
                if (!flow::in_fattened_corner(flow::classify_region(p, params))) continue;
                if (flow::nearest_corner(p) != std::array<int, 2>{0, 0}) continue;
                const double u = std::abs(p.x1);
                double res;
                if (u <= rep.xbar1) {
                    // -g0'' - A sin(x1) cos(x2) g0'(|x1|) sign(x1) = 1 + A x1 sin(x1) cos(x2)
                    res = 1.0 + A * p.x1 * std::sin(p.x1) * std::cos(p.x2);
                } else {
                    res = -18.0 / (A * u * u) +
                          18.0 * (std::sin(p.x1) / p.x1) * std::cos(p.x2);
                }
                track_min(rep, res, p);
            }
        }
        break;
    }
    case Supersolution::ExitExponential: {
        // bar-zeta_2 = exp(gamma2 A (theta_c - theta_hi)) with the explicit
        // edge coordinate theta_c = cos(x1)/cos(x2) (grad theta_c . grad h = 0).
        // Reported residual is (-lap + A v.grad) bar-zeta / (gamma2 A^2 bar-zeta):
        //   (v . grad theta_c) - (lap theta_c)/A - gamma2 |grad theta_c|^2 >= 0.
        rep.required_level = 0.0;
        std::vector<flow::Point> pts;
        double min_ratio = std::numeric_limits<double>::infinity();
        sample_edge_strip(params, -delta, delta, [&](flow::Point p) {
            pts.push_back(p);
            const double s1 = std::sin(p.x1), c1 = std::cos(p.x1);
            const double c2 = std::cos(p.x2), t2 = std::tan(p.x2);
            const double vdt = s1 * s1 + c1 * c1 * t2 * t2;
            const double gsq =
                (s1 * s1 * c2 * c2 + c1 * c1 * (1 - c2 * c2)) / (c2 * c2 * c2 * c2);
            min_ratio = std::min(min_ratio, vdt / gsq);
        });
        rep.gamma2 = cand.gamma2.value_or(0.5 * min_ratio);
        for (const auto& p : pts) {
            const double s1 = std::sin(p.x1), c1 = std::cos(p.x1);
            const double c2 = std::cos(p.x2), t2 = std::tan(p.x2);
            const double vdt = s1 * s1 + c1 * c1 * t2 * t2;
            const double gsq =
                (s1 * s1 * c2 * c2 + c1 * c1 * (1 - c2 * c2)) / (c2 * c2 * c2 * c2);
            const double lap_theta = 2.0 * (c1 / c2) * t2 * t2;
            track_min(rep, vdt - lap_theta / A - rep.gamma2 * gsq, p);
        }
        break;
    }
    case Supersolution::PsiPlus: {
        // psi+ = 1 - erf(h / (c0 sqrt(t))); residual
        //   (h / (c0 sqrt(pi t^3))) exp(-h^2/(c0^2 t)) (1 - 4t - 4|grad h|^2/c0^2) >= 0
        // on {h > 0} x (0, 1/8].
        rep.required_level = 0.0;
        rep.c0 = cand.c0.value_or(10.0);
        for (int a = 0; a < nsamp; ++a) {
            for (int b = 0; b < nsamp; ++b) {
                const flow::Point p{smp.uniform(1e-3, flow::pi - 1e-3),
                                    smp.uniform(1e-3, flow::pi - 1e-3)};
                const double t = std::exp(smp.uniform(std::log(1e-6), std::log(0.125)));
                const double hv = flow::hamiltonian(p);
                const double pref = hv / (rep.c0 * std::sqrt(flow::pi * t * t * t)) *
                                    std::exp(-hv * hv / (rep.c0 * rep.c0 * t));
                const double res =
                    pref * (1.0 - 4.0 * t - 4.0 * flow::grad_h_norm_sq(p) / (rep.c0 * rep.c0));
                track_min(rep, res, p);
            }
        }
        break;
    }
    case Supersolution::ResolventEdge: {
        // phi_e = alpha h (2 eps - h), eps = 1/sqrt(alpha lambda); residual
        //   2 alpha |grad h|^2 + 4 alpha h (eps - h) + lambda alpha h (2 eps - h) >= 1
        // on the eps-thickened edge region with h in (0, eps). alpha is fixed
        // by 2 alpha inf|grad h|^2 >= 1 (fixed point in eps).
        rep.required_level = 1.0;
        rep.lambda = cand.lambda.value_or(std::sqrt(A));
        double alpha = cand.alpha.value_or(1.0);
        if (!cand.alpha) {
            for (int it = 0; it < 4; ++it) {
                const double eps = 1.0 / std::sqrt(alpha * rep.lambda);
                flow::FlowParams pe = params;
                pe.N = eps * std::sqrt(A);
                pe.validate();
                double floor_sq = std::numeric_limits<double>::infinity();
                for (int a = 0; a < nsamp; ++a) {
                    const double x1 = smp.uniform(1e-3, flow::pi - 1e-3);
                    const double h = smp.uniform(0.0, eps);
                    if (h >= std::sin(x1)) continue;
                    const flow::Point p{x1, std::asin(h / std::sin(x1))};
                    if (!flow::in_edge(flow::classify_region(p, pe))) continue;
                    floor_sq = std::min(floor_sq, flow::grad_h_norm_sq(p));
                }
                alpha = 1.25 / (2.0 * floor_sq);
            }
        }
        rep.alpha = alpha;
        const double eps = 1.0 / std::sqrt(alpha * rep.lambda);
        flow::FlowParams pe = params;
        pe.N = eps * std::sqrt(A);
        pe.validate();
        sample_edge_strip(pe, 0.0, eps, [&](flow::Point p) {
            const double hv = flow::hamiltonian(p);
            if (hv <= 0.0) return;
            const double res = 2.0 * alpha * flow::grad_h_norm_sq(p) +
                               4.0 * alpha * hv * (eps - hv) +
                               rep.lambda * alpha * hv * (2.0 * eps - hv);
            track_min(rep, res, p);
        });
        break;
    }
    }

    rep.pass = rep.samples > 0 && rep.min_residual >= rep.required_level - 1e-9;
    return rep;
}

void write_field_csv(std::ostream& out, const CellField& field) {
    out << "i,j,x1,x2,value\n";
    for (int j = 0; j < field.ny; ++j)
        for (int i = 0; i < field.nx; ++i)
            out << i << ',' << j << ',' << field.x(i) << ',' << field.y(j) << ','
                << field.at(i, j) << '\n';
}

} // namespace cellflow::pde
