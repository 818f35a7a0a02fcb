#include "cellflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cellflow/bounds.hpp"

namespace cellflow::stats {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Batch-means standard error over values[i] grouped by path_index mod n_batches.
double batch_se(std::span<const PathRecord> paths, std::span<const double> values) {
    double sums[n_batches] = {};
    std::size_t counts[n_batches] = {};
    for (std::size_t i = 0; i < paths.size(); ++i) {
        const auto b = paths[i].path_index % n_batches;
        sums[b] += values[i];
        counts[b] += 1;
    }
    int used = 0;
    double mean = 0.0;
    double means[n_batches];
    for (int b = 0; b < n_batches; ++b) {
        if (counts[b] == 0) continue;
        means[used] = sums[b] / static_cast<double>(counts[b]);
        mean += means[used];
        ++used;
    }
    if (used < 2) return 0.0;
    mean /= used;
    double ss = 0.0;
    for (int b = 0; b < used; ++b) ss += (means[b] - mean) * (means[b] - mean);
    return std::sqrt(ss / (used - 1) / used);
}

double sq(double x) { return x * x; }

} // namespace

TimeGrid TimeGrid::linear(double t0, double t1, int m) {
    TimeGrid g;
    g.times.resize(m);
    for (int k = 0; k < m; ++k)
        g.times[k] = t0 + (t1 - t0) * static_cast<double>(k) / (m - 1);
    g.times.back() = t1;
    g.validate();
    return g;
}

TimeGrid TimeGrid::log_spaced(double t0, double t1, int m) {
    TimeGrid g;
    g.times.resize(m);
    const double l0 = std::log(t0), l1 = std::log(t1);
    for (int k = 0; k < m; ++k)
        g.times[k] = std::exp(l0 + (l1 - l0) * static_cast<double>(k) / (m - 1));
    g.times.back() = t1;
    g.validate();
    return g;
}

void TimeGrid::validate() const {
    require(!times.empty(), "TimeGrid: empty");
    require(times.front() > 0.0, "TimeGrid: times must be positive");
    for (std::size_t k = 1; k < times.size(); ++k)
        require(times[k] > times[k - 1], "TimeGrid: times must be strictly increasing");
}

VarianceCurve variance_curve(std::span<const PathRecord> paths, const TimeGrid& grid) {
    require(paths.size() >= 2, "variance_curve: need at least 2 paths");
    const std::size_t m = grid.times.size();
    VarianceCurve out;
    out.msd.assign(m, 0.0);
    out.msd_se.assign(m, 0.0);
    out.var_x1.assign(m, 0.0);
    out.var_x2.assign(m, 0.0);
    out.mean_crossings.assign(m, 0.0);

    const double n = static_cast<double>(paths.size());
    std::vector<double> d2(paths.size());
    for (std::size_t k = 0; k < m; ++k) {
        double s1 = 0.0, s2 = 0.0, q1 = 0.0, q2 = 0.0;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            const auto& p = paths[i];
            const double dx1 = p.at_grid[k].x1 - p.x0.x1;
            const double dx2 = p.at_grid[k].x2 - p.x0.x2;
            d2[i] = dx1 * dx1 + dx2 * dx2;
            s1 += dx1;
            s2 += dx2;
            q1 += dx1 * dx1;
            q2 += dx2 * dx2;
        }
        double msd = 0.0;
        for (std::size_t i = 0; i < paths.size(); ++i) msd += d2[i];
        out.msd[k] = msd / n;
        out.msd_se[k] = batch_se(paths, d2);
        out.var_x1[k] = (q1 - s1 * s1 / n) / (n - 1);
        out.var_x2[k] = (q2 - s2 * s2 / n) / (n - 1);
    }

    for (const auto& p : paths) {
        const auto tau = p.log.tau();
        for (std::size_t k = 0; k < m; ++k) {
            const auto it = std::upper_bound(tau.begin(), tau.end(), grid.times[k]);
            out.mean_crossings[k] += static_cast<double>(it - tau.begin());
        }
    }
    for (std::size_t k = 0; k < m; ++k) out.mean_crossings[k] /= n;
    return out;
}

EmpiricalCdf crossing_cdf(std::span<const PathRecord> paths, int coord_i, int n,
                          const TimeGrid& grid, double alpha) {
    require(n >= 1, "crossing_cdf: n must be >= 1");
    require(!paths.empty(), "crossing_cdf: no paths");
    EmpiricalCdf out;
    out.samples = paths.size();
    out.dkw_band = std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(paths.size())));
    out.value.assign(grid.times.size(), 0.0);
    for (const auto& p : paths) {
        const double t_in = p.log.tau_i_n(coord_i, n);
        for (std::size_t k = 0; k < grid.times.size(); ++k)
            if (t_in <= grid.times[k]) out.value[k] += 1.0;
    }
    for (auto& v : out.value) v /= static_cast<double>(paths.size());
    return out;
}

std::vector<TelescopingReport> telescoping_check(std::span<const PathRecord> paths, int coord_i,
                                                 const TimeGrid& grid, int max_legs) {
    require(paths.size() >= 2, "telescoping_check: need at least 2 paths");
    require(coord_i == 1 || coord_i == 2, "telescoping_check: coord must be 1 or 2");

    std::vector<TelescopingReport> reports;
    reports.reserve(grid.times.size());
    std::vector<std::vector<double>> legs(paths.size());
    std::vector<double> scratch(paths.size());

    for (std::size_t k = 0; k < grid.times.size(); ++k) {
        const double t = grid.times[k];
        int n_legs = 0;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            const auto& p = paths[i];
            auto& leg = legs[i];
            leg.clear();
            double prev = (coord_i == 1) ? p.x0.x1 : p.x0.x2;
            for (const auto& ev : p.log.events) {
                if (ev.kind != crossing::EventKind::SeparatrixHit) continue;
                if (!ev.coord || *ev.coord != coord_i) continue;
                if (ev.t > t) break;
                const double x = (coord_i == 1) ? ev.pos.x1 : ev.pos.x2;
                leg.push_back(x - prev);
                prev = x;
            }
            const double xt = (coord_i == 1) ? p.at_grid[k].x1 : p.at_grid[k].x2;
            leg.push_back(xt - prev); // the truncated leg tau^i_{K+1} ^ t = t
            n_legs = std::max(n_legs, static_cast<int>(leg.size()));
        }

        TelescopingReport rep;
        rep.t = t;
        const double n = static_cast<double>(paths.size());

        for (std::size_t i = 0; i < paths.size(); ++i) {
            double total = 0.0, sumsq = 0.0;
            for (double d : legs[i]) {
                total += d;
                sumsq += d * d;
            }
            rep.var += total * total;
            rep.sum_leg_sq += sumsq;
            scratch[i] = total * total - sumsq; // 2 sum_{n<m} Dn Dm per path
        }
        rep.var /= n;
        rep.sum_leg_sq /= n;
        rep.defect = std::abs(rep.var - rep.sum_leg_sq);
        rep.defect_se = batch_se(paths, scratch);

        const int nm = std::min(n_legs, max_legs);
        for (int a = 1; a <= nm; ++a) {
            for (int b = a + 1; b <= nm; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < paths.size(); ++i) {
                    const auto& leg = legs[i];
                    const double da = (a <= static_cast<int>(leg.size())) ? leg[a - 1] : 0.0;
                    const double db = (b <= static_cast<int>(leg.size())) ? leg[b - 1] : 0.0;
                    scratch[i] = da * db;
                }
                for (double v : scratch) s += v;
                CrossMoment cm;
                cm.n = a;
                cm.m = b;
                cm.value = s / n;
                cm.se = batch_se(paths, scratch);
                if (std::abs(cm.value) > rep.max_abs_cross) {
                    rep.max_abs_cross = std::abs(cm.value);
                    rep.max_abs_cross_se = cm.se;
                }
                rep.cross.push_back(cm);
            }
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

BinomialEstimate corner_reentry_estimate(std::span<const ProbeOutcomeCount> outcomes) {
    require(!outcomes.empty(), "corner_reentry_estimate: no probe outcomes");
    BinomialEstimate best;
    bool first = true;
    for (const auto& oc : outcomes) {
        require(oc.trials > 0, "corner_reentry_estimate: start with zero trials");
        const double p = static_cast<double>(oc.hits) / static_cast<double>(oc.trials);
        if (first || p > best.p_hat) {
            first = false;
            // Agresti-Coull adjusted interval, sane at p near 0 or 1.
            const double nt = static_cast<double>(oc.trials) + 4.0;
            const double pt = (static_cast<double>(oc.hits) + 2.0) / nt;
            best.p_hat = p;
            best.ci = std::sqrt(pt * (1.0 - pt) / nt);
            best.trials = oc.trials;
        }
    }
    return best;
}

CoordinateBalance coordinate_balance(std::span<const PathRecord> paths, std::size_t min_events) {
    std::size_t c1 = 0, c2 = 0, amb = 0;
    for (const auto& p : paths) {
        for (const auto& ev : p.log.events) {
            if (ev.kind != crossing::EventKind::SeparatrixHit) continue;
            if (!ev.coord)
                ++amb;
            else if (*ev.coord == 1)
                ++c1;
            else
                ++c2;
            break; // first hit only
        }
    }
    const std::size_t total = c1 + c2 + amb;
    require(total >= min_events, "coordinate_balance: not enough first-crossing events");
    CoordinateBalance out;
    out.events = total;
    const double n = static_cast<double>(total);
    out.p1 = c1 / n;
    out.p2 = c2 / n;
    out.ambiguous_fraction = amb / n;
    out.ci = std::sqrt(out.p1 * (1.0 - out.p1) / n);
    return out;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 2, "linear_fit: need matched points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0, "linear_fit: degenerate abscissae");
    LinearFit fit;
    fit.points = x.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        ssr += sq(y[i] - fit.intercept - fit.slope * x[i]);
    fit.r2 = (syy > 0.0) ? 1.0 - ssr / syy : 1.0;
    if (x.size() > 2) fit.slope_se = std::sqrt(ssr / (n - 2.0) / sxx);
    return fit;
}

ScalingFitPair fit_regimes(const TimeGrid& grid, std::span<const double> msd, double split) {
    require(msd.size() == grid.times.size(), "fit_regimes: size mismatch");
    std::vector<double> tx_e, ty_e, tx_l, ty_l;
    for (std::size_t k = 0; k < msd.size(); ++k) {
        if (grid.times[k] < split) {
            tx_e.push_back(grid.times[k]);
            ty_e.push_back(msd[k] * msd[k]);
        } else {
            tx_l.push_back(grid.times[k]);
            ty_l.push_back(msd[k]);
        }
    }
    require(tx_e.size() >= 4, "fit_regimes: early window has fewer than 4 grid points");
    require(tx_l.size() >= 4, "fit_regimes: late window has fewer than 4 grid points");
    ScalingFitPair out;
    out.split = split;
    out.early = linear_fit(tx_e, ty_e);
    out.late = linear_fit(tx_l, ty_l);
    return out;
}

LinearFit loglog_slope(const TimeGrid& grid, std::span<const double> msd, double t_lo,
                       double t_hi) {
    std::vector<double> lx, ly;
    for (std::size_t k = 0; k < msd.size(); ++k) {
        const double t = grid.times[k];
        if (t < t_lo || t > t_hi || msd[k] <= 0.0) continue;
        lx.push_back(std::log(t));
        ly.push_back(std::log(msd[k]));
    }
    require(lx.size() >= 3, "loglog_slope: fewer than 3 usable grid points in window");
    return linear_fit(lx, ly);
}

double fit_c_upper(const TimeGrid& grid, const EmpiricalCdf& cdf, int n, double delta) {
    // Points within one DKW band of saturation impose no statistically
    // meaningful constraint (the true CDF is below 1; the empirical one may
    // touch it) and would force c to infinity, so they are skipped.
    const double cap = 1.0 - std::max(cdf.dkw_band, 1e-9);
    double c = 0.0;
    for (std::size_t k = 0; k < grid.times.size(); ++k) {
        const double f = cdf.value[k];
        if (f <= 0.0 || f >= cap) continue;
        c = std::max(c, n * delta / (std::sqrt(grid.times[k]) * bounds::erfc_inv(f)));
    }
    require(c > 0.0, "fit_c_upper: no usable grid points");
    return c;
}

double fit_c_lower(const TimeGrid& grid, const EmpiricalCdf& cdf, int n, double delta) {
    const double lnd = std::abs(std::log(delta));
    double c = 0.0;
    for (std::size_t k = 0; k < grid.times.size(); ++k) {
        const double f = cdf.value[k];
        if (f >= 1.0) continue;
        c = std::max(c, (1.0 - f) * std::sqrt(grid.times[k]) / (n * delta * lnd));
    }
    require(c > 0.0, "fit_c_lower: no usable grid points");
    return c;
}

} // namespace cellflow::stats
