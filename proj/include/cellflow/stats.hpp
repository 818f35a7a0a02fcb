#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cellflow/crossing.hpp"
#include "cellflow/flowfield.hpp"

// Ensemble aggregation: displacement variance curves, crossing-count
// statistics, empirical CDFs of tau^i_n with DKW confidence bands,
// regime fits, and fitting of the scale constants that the analytic bounds
// leave free. All aggregations are deterministic reductions over per-path
// records in path order; standard errors use 32 path batches
// (batch = path_index mod 32), which is robust to the heavy tails of the
// crossing times.
namespace cellflow::stats {

inline constexpr int n_batches = 32;

struct TimeGrid {
    std::vector<double> times;

    static TimeGrid linear(double t0, double t1, int m);
    static TimeGrid log_spaced(double t0, double t1, int m);
    void validate() const; // strictly increasing, positive
};

// Everything the aggregations need from one simulated path.
struct PathRecord {
    std::uint64_t path_index = 0;
    flow::Point x0;
    std::vector<flow::Point> at_grid; // X(t_k) for each grid time
    crossing::CrossingLog log;
};

struct VarianceCurve {
    std::vector<double> msd;    // E|X_t - x|^2 (the paper's variance)
    std::vector<double> msd_se; // batch-means standard error
    std::vector<double> var_x1; // per-coordinate unbiased sample variances
    std::vector<double> var_x2;
    std::vector<double> mean_crossings; // mean #{n : tau_n <= t}
};

// Throws std::invalid_argument on fewer than 2 paths.
VarianceCurve variance_curve(std::span<const PathRecord> paths, const TimeGrid& grid);

struct EmpiricalCdf {
    std::vector<double> value; // P(tau^i_n <= t_k)
    double dkw_band = 0.0;     // sqrt(ln(2/alpha) / (2 m))
    std::size_t samples = 0;
};

EmpiricalCdf crossing_cdf(std::span<const PathRecord> paths, int coord_i, int n,
                          const TimeGrid& grid, double alpha = 0.05);

struct CrossMoment {
    int n = 0, m = 0;
    double value = 0.0;
    double se = 0.0;
};

// Telescoping decomposition of the coordinate variance at one grid time:
// legs Delta_n = X_i(tau^i_n ^ t) - X_i(tau^i_{n-1} ^ t).
struct TelescopingReport {
    double t = 0.0;
    double var = 0.0;           // E|X_i(t) - x_i|^2
    double sum_leg_sq = 0.0;    // sum_n E Delta_n^2
    double defect = 0.0;        // |var - sum_leg_sq|
    double defect_se = 0.0;
    std::vector<CrossMoment> cross; // E Delta_n Delta_m for n < m
    double max_abs_cross = 0.0;
    double max_abs_cross_se = 0.0;
};

std::vector<TelescopingReport> telescoping_check(std::span<const PathRecord> paths, int coord_i,
                                                 const TimeGrid& grid, int max_legs = 8);

struct BinomialEstimate {
    double p_hat = 0.0;
    double ci = 0.0; // Agresti-Coull standard error
    std::size_t trials = 0;
};

struct ProbeOutcomeCount {
    flow::Point start;
    std::size_t trials = 0;
    std::size_t hits = 0; // probes that re-entered a corner before leaving the layer
};

// Maximum over start points of the empirical corner re-entry frequency.
BinomialEstimate corner_reentry_estimate(std::span<const ProbeOutcomeCount> outcomes);

struct CoordinateBalance {
    double p1 = 0.0, p2 = 0.0;
    double ambiguous_fraction = 0.0;
    double ci = 0.0; // binomial CI on p1
    std::size_t events = 0;
};

// Fraction of first separatrix hits assigned to each coordinate. Requires at
// least min_events paths with an observed tau_1 (throws otherwise).
CoordinateBalance coordinate_balance(std::span<const PathRecord> paths,
                                     std::size_t min_events = 10000);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_se = 0.0;
    std::size_t points = 0;
};

LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

struct ScalingFitPair {
    LinearFit early; // (Var)^2 vs t on t < split
    LinearFit late;  // Var vs t on t >= split
    double split = 0.0;
};

// Two-regime fit of the variance curve; throws if either window has fewer
// than 4 grid points.
ScalingFitPair fit_regimes(const TimeGrid& grid, std::span<const double> msd,
                           double split = 0.015);

// OLS slope of log(msd) vs log(t) restricted to [t_lo, t_hi].
LinearFit loglog_slope(const TimeGrid& grid, std::span<const double> msd, double t_lo,
                       double t_hi);

// Smallest c with F_hat(t_k) <= 1 - erf(n delta / (c sqrt(t_k))) at every
// grid point (grid points with F_hat outside (0, 1 - 1e-9) are skipped; they
// impose no finite constraint).
double fit_c_upper(const TimeGrid& grid, const EmpiricalCdf& cdf, int n, double delta);

// Smallest c with F_hat(t_k) >= (1 - c n delta |ln delta| / sqrt(t_k))^+.
double fit_c_lower(const TimeGrid& grid, const EmpiricalCdf& cdf, int n, double delta);

} // namespace cellflow::stats
