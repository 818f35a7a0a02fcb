#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cellflow/bounds.hpp"
#include "cellflow/harness.hpp"
#include "cellflow/stats.hpp"

using namespace cellflow;

namespace {

// A fabricated record: straight-line motion in x1 with separatrix hits of
// coordinate `coord` at the given times (position = distance traveled).
stats::PathRecord synthetic_record(std::uint64_t index, const stats::TimeGrid& grid,
                                   double speed, std::vector<double> hit_times, int coord) {
    stats::PathRecord rec;
    rec.path_index = index;
    rec.x0 = {0.0, 0.0};
    for (const double t : grid.times) rec.at_grid.push_back({speed * t, 0.0});
    for (const double t : hit_times)
        rec.log.events.push_back(
            {crossing::EventKind::SeparatrixHit, t, {speed * t, 0.0}, coord});
    return rec;
}

} // namespace

TEST_CASE("time grids") {
    const auto lin = stats::TimeGrid::linear(0.1, 1.0, 10);
    CHECK(lin.times.size() == 10);
    CHECK(lin.times.front() == doctest::Approx(0.1));
    CHECK(lin.times.back() == 1.0);
    const auto log = stats::TimeGrid::log_spaced(1e-3, 1.0, 7);
    CHECK(log.times[1] / log.times[0] == doctest::Approx(std::pow(1000.0, 1.0 / 6)));
    const stats::TimeGrid zero_start{{0.0, 1.0}};
    CHECK_THROWS_AS(zero_start.validate(), std::invalid_argument);
    const stats::TimeGrid repeated{{1.0, 1.0}};
    CHECK_THROWS_AS(repeated.validate(), std::invalid_argument);
}

TEST_CASE("variance curve on synthetic records") {
    const stats::TimeGrid grid{{1.0, 2.0}};
    std::vector<stats::PathRecord> recs;
    for (int i = 0; i < 4; ++i)
        recs.push_back(synthetic_record(i, grid, static_cast<double>(i), {}, 1));
    const auto curve = stats::variance_curve(recs, grid);
    // displacements at t=1: 0,1,2,3 -> msd = (0+1+4+9)/4
    CHECK(curve.msd[0] == doctest::Approx(14.0 / 4.0));
    CHECK(curve.msd[1] == doctest::Approx(4.0 * 14.0 / 4.0));
    // per-coordinate unbiased variance of {0,1,2,3} is 5/3
    CHECK(curve.var_x1[0] == doctest::Approx(5.0 / 3.0));
    CHECK(curve.var_x2[0] == 0.0);
    CHECK(curve.mean_crossings[0] == 0.0);

    std::vector<stats::PathRecord> one(recs.begin(), recs.begin() + 1);
    CHECK_THROWS_AS(stats::variance_curve(one, grid), std::invalid_argument);
}

TEST_CASE("variance vanishes identically at vanishing displacement") {
    const stats::TimeGrid grid{{1e-9}};
    std::vector<stats::PathRecord> recs;
    for (int i = 0; i < 8; ++i) recs.push_back(synthetic_record(i, grid, 0.0, {}, 1));
    const auto curve = stats::variance_curve(recs, grid);
    CHECK(curve.msd[0] == 0.0);
    CHECK(curve.msd_se[0] == 0.0);
}

TEST_CASE("pure diffusion variance matches 4t within 3 SE") {
    harness::EnsembleSpec spec;
    spec.flow = {0.0, 1.0, 0.15, 0.30};
    spec.step.dt_max = 0.01;
    spec.grid = stats::TimeGrid{{0.25, 0.5, 1.0}};
    spec.x0 = {0.0, 0.0};
    spec.paths = 20000;
    spec.seed = 99;
    spec.track_crossings = false;
    const auto records = harness::run_ensemble(spec);
    const auto curve = stats::variance_curve(records, spec.grid);
    for (std::size_t k = 0; k < spec.grid.times.size(); ++k) {
        CHECK(curve.msd_se[k] > 0.0);
        CHECK(std::abs(curve.msd[k] - 4.0 * spec.grid.times[k]) <= 3.0 * curve.msd_se[k]);
    }
}

TEST_CASE("empirical crossing CDF on synthetic records") {
    const stats::TimeGrid grid{{0.5, 1.0, 1.5, 2.0}};
    std::vector<stats::PathRecord> recs;
    // tau^1_1 at 0.4, 0.9, 1.4, 1.9 across four paths; tau^1_2 one step later
    for (int i = 0; i < 4; ++i)
        recs.push_back(synthetic_record(i, grid, 1.0, {0.4 + 0.5 * i, 1.9 + 0.5 * i}, 1));
    const auto cdf1 = stats::crossing_cdf(recs, 1, 1, grid);
    CHECK(cdf1.value[0] == doctest::Approx(0.25));
    CHECK(cdf1.value[3] == doctest::Approx(1.0)); // beyond all observed tau^1_1
    const auto cdf2 = stats::crossing_cdf(recs, 1, 2, grid);
    for (std::size_t k = 0; k < grid.times.size(); ++k)
        CHECK(cdf2.value[k] <= cdf1.value[k]); // monotone decreasing in n
    for (std::size_t k = 1; k < grid.times.size(); ++k)
        CHECK(cdf1.value[k] >= cdf1.value[k - 1]); // monotone in t
    // the other coordinate never fires
    CHECK(stats::crossing_cdf(recs, 2, 1, grid).value[3] == 0.0);
    // DKW band formula
    CHECK(cdf1.dkw_band == doctest::Approx(std::sqrt(std::log(2.0 / 0.05) / 8.0)));
}

TEST_CASE("telescoping on a single-leg ensemble is exact") {
    const stats::TimeGrid grid{{1.0}};
    std::vector<stats::PathRecord> recs;
    for (int i = 0; i < 16; ++i)
        recs.push_back(synthetic_record(i, grid, 0.1 * i, {}, 1)); // no crossings
    const auto reports = stats::telescoping_check(recs, 1, grid);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].defect == 0.0); // (sum of one leg)^2 == leg^2 pathwise
    CHECK(reports[0].max_abs_cross == 0.0);
    CHECK(reports[0].var == doctest::Approx(reports[0].sum_leg_sq));
}

TEST_CASE("telescoping decomposition is consistent on synthetic crossings") {
    const stats::TimeGrid grid{{2.0}};
    std::vector<stats::PathRecord> recs;
    // two legs: hit at t=1 (position = t), then keep moving to t=2
    for (int i = 0; i < 8; ++i)
        recs.push_back(synthetic_record(i, grid, 1.0 + 0.01 * i, {1.0}, 1));
    const auto reports = stats::telescoping_check(recs, 1, grid);
    // var = E(X(2))^2; legs are X(tau1) and X(2) - X(tau1); both positive here,
    // so the cross moment is positive and the defect reflects it exactly.
    const auto& rep = reports[0];
    double expect_cross = 0.0;
    for (int i = 0; i < 8; ++i) {
        const double v = 1.0 + 0.01 * i;
        expect_cross += (v * 1.0) * (v * 2.0 - v * 1.0);
    }
    expect_cross /= 8.0;
    REQUIRE(!rep.cross.empty());
    CHECK(rep.cross[0].value == doctest::Approx(expect_cross));
    CHECK(rep.defect == doctest::Approx(2.0 * expect_cross));
}

TEST_CASE("telescoping cross moments vanish statistically at A = 1000") {
    harness::EnsembleSpec spec;
    spec.flow = {1000.0, 1.0, 0.15, 0.30};
    spec.grid = stats::TimeGrid{{0.01}};
    spec.x0 = {0.0, 0.0};
    spec.paths = 5000;
    spec.seed = 2024;
    const auto records = harness::run_ensemble(spec);
    for (const int coord : {1, 2}) {
        const auto reports = stats::telescoping_check(records, coord, spec.grid, 4);
        for (const auto& cm : reports[0].cross) {
            if (cm.se == 0.0) continue;
            CHECK(std::abs(cm.value) <= 4.0 * cm.se);
        }
        CHECK(reports[0].defect <= 4.0 * reports[0].defect_se + 1e-12);
    }
}

TEST_CASE("corner re-entry estimate picks the worst start") {
    std::vector<stats::ProbeOutcomeCount> outcomes{
        {{0.5, 0.0}, 1000, 100},
        {{1.0, 0.0}, 1000, 400},
        {{1.5, 0.0}, 1000, 250},
    };
    const auto est = stats::corner_reentry_estimate(outcomes);
    CHECK(est.p_hat == doctest::Approx(0.4));
    CHECK(est.trials == 1000);
    CHECK(est.ci > 0.0);
    CHECK(est.ci < 0.05);
    std::vector<stats::ProbeOutcomeCount> bad{{{0.0, 0.0}, 0, 0}};
    CHECK_THROWS_AS(stats::corner_reentry_estimate(bad), std::invalid_argument);
}

TEST_CASE("coordinate balance respects the corner-exchange symmetry") {
    // The coordinate swap maps this flow to its reversed-swirl image, which
    // is the same flow translated by (pi, 0). A corner start therefore favors
    // the coordinate of its drift-outflow axis, and the exact symmetry is
    // p1(from (0,0)) + p1(from (pi,0)) = 1, not p1 = 1/2 at either corner.
    stats::CoordinateBalance balance[2];
    int k = 0;
    for (const double x0x : {0.0, flow::pi}) {
        harness::EnsembleSpec spec;
        spec.flow = {1600.0, 1.0, 0.15, 0.30};
        spec.grid = stats::TimeGrid{{0.05}};
        spec.x0 = {x0x, 0.0};
        spec.paths = 13000;
        spec.seed = 31415;
        const auto records = harness::run_ensemble(spec);
        balance[k] = stats::coordinate_balance(records, 10000);
        CHECK(balance[k].events >= 10000);
        CHECK(balance[k].p1 + balance[k].p2 + balance[k].ambiguous_fraction ==
              doctest::Approx(1.0));
        CHECK(balance[k].ambiguous_fraction < 1e-3);
        // bounded away from 0 and 1
        CHECK(0.05 < balance[k].p1);
        CHECK(balance[k].p1 < 0.95);
        CHECK(0.05 < balance[k].p2);
        CHECK(balance[k].p2 < 0.95);
        ++k;
    }
    const double combined_ci = std::hypot(balance[0].ci, balance[1].ci);
    CHECK(std::abs(balance[0].p1 + balance[1].p1 - 1.0) <= 3.0 * combined_ci);

    harness::EnsembleSpec spec;
    spec.flow = {1600.0, 1.0, 0.15, 0.30};
    spec.grid = stats::TimeGrid{{0.001}};
    spec.x0 = {0.0, 0.0};
    spec.paths = 10;
    const auto few = harness::run_ensemble(spec);
    CHECK_THROWS_AS(stats::coordinate_balance(few, 10000), std::invalid_argument);
}

TEST_CASE("regime fits recover synthetic scaling laws") {
    const auto grid = stats::TimeGrid::linear(0.001, 0.04, 40);
    std::vector<double> sqrt_law(grid.times.size()), linear_law(grid.times.size());
    for (std::size_t k = 0; k < grid.times.size(); ++k) {
        sqrt_law[k] = std::sqrt(grid.times[k]);
        linear_law[k] = 3.0 * grid.times[k];
    }
    const auto fit_sqrt = stats::fit_regimes(grid, sqrt_law, 0.015);
    CHECK(fit_sqrt.early.r2 == doctest::Approx(1.0));
    CHECK(fit_sqrt.early.slope == doctest::Approx(1.0)); // (sqrt t)^2 = t
    const auto fit_lin = stats::fit_regimes(grid, linear_law, 0.015);
    CHECK(fit_lin.late.r2 == doctest::Approx(1.0));
    CHECK(fit_lin.late.slope == doctest::Approx(3.0));

    const auto tiny = stats::TimeGrid::linear(0.001, 0.04, 6);
    std::vector<double> y(tiny.times.size(), 1.0);
    CHECK_THROWS_AS(stats::fit_regimes(tiny, y, 0.015), std::invalid_argument);
}

TEST_CASE("log-log slope of a power law") {
    const auto grid = stats::TimeGrid::log_spaced(0.001, 0.1, 30);
    std::vector<double> y(grid.times.size());
    for (std::size_t k = 0; k < grid.times.size(); ++k)
        y[k] = 2.7 * std::pow(grid.times[k], 0.5);
    const auto fit = stats::loglog_slope(grid, y, 0.002, 0.05);
    CHECK(fit.slope == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.r2 == doctest::Approx(1.0));
}

TEST_CASE("fitted constants make the analytic bounds tight") {
    const double delta = 0.05;
    const auto grid = stats::TimeGrid::log_spaced(1e-4, 0.1, 25);
    // synthesize an empirical CDF exactly on the erf upper bound with c = 0.8
    stats::EmpiricalCdf cdf;
    cdf.samples = 100000;
    cdf.dkw_band = std::sqrt(std::log(2.0 / 0.05) / (2.0 * cdf.samples));
    for (const double t : grid.times)
        cdf.value.push_back(bounds::erf_upper_cdf(1, delta, 0.8, t));
    const double c_up = stats::fit_c_upper(grid, cdf, 1, delta);
    CHECK(c_up == doctest::Approx(0.8).epsilon(1e-6));
    for (const double t : grid.times) {
        // fitted bound dominates the data everywhere
        const double f = cdf.value[std::find(grid.times.begin(), grid.times.end(), t) -
                                   grid.times.begin()];
        CHECK(bounds::erf_upper_cdf(1, delta, c_up, t) >= f - 1e-12);
    }

    const double c_lo = stats::fit_c_lower(grid, cdf, 1, delta);
    for (std::size_t k = 0; k < grid.times.size(); ++k)
        CHECK(cdf.value[k] >= bounds::log_lower_cdf(1, delta, c_lo, grid.times[k]) - 1e-12);
}
