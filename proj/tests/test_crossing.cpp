#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "cellflow/crossing.hpp"
#include "cellflow/harness.hpp"

using namespace cellflow;

namespace {

const flow::FlowParams kA1000{1000.0, 1.0, 0.15, 0.30};

sde::ParticleState at(double x1, double x2, double t) { return {{x1, x2}, t}; }

} // namespace

TEST_CASE("hit coordinate classification") {
    CHECK(crossing::classify_hit_coordinate({flow::pi + 1e-12, 1.0}, kA1000) == 1);
    CHECK(crossing::classify_hit_coordinate({1.0, 2 * flow::pi - 1e-12}, kA1000) == 2);
    CHECK(!crossing::classify_hit_coordinate({flow::pi + 1e-12, flow::pi - 1e-12}, kA1000));
}

TEST_CASE("separatrix crossing refined to the midpoint of a symmetric segment") {
    crossing::CrossingLog log;
    log.phase = crossing::CrossingLog::Phase::AwaitSeparatrix;
    const double y = std::asin(0.01);
    crossing::observe_step(at(flow::pi / 2, y, 0.0), at(flow::pi / 2, -y, 1.0), log, kA1000);
    REQUIRE(log.events.size() == 1);
    CHECK(log.events[0].kind == crossing::EventKind::SeparatrixHit);
    CHECK(std::abs(log.events[0].t - 0.5) <= 1e-11);
    CHECK(std::abs(flow::hamiltonian(log.events[0].pos)) <= crossing::eps_event);
    CHECK(log.events[0].coord == 2);
}

TEST_CASE("a path that never leaves the layer gains no LayerExit") {
    crossing::CrossingLog log;
    const double inside = 0.2 * kA1000.delta();
    double t = 0.0;
    sde::ParticleState prev = at(1.0, std::asin(inside), t);
    for (int i = 0; i < 50; ++i) {
        t += 0.01;
        const auto next = at(1.0 + 0.01 * i, std::asin(inside * std::cos(0.1 * i)), t);
        crossing::observe_step(prev, next, log, kA1000);
        prev = next;
    }
    CHECK(log.sigma().empty());
}

TEST_CASE("synthetic piecewise path with known crossing times") {
    // x1 = pi/2 throughout; x2 ramps 0 -> 2 asin(delta) on [0,1], then down to
    // -asin(delta)/2 on [1,2]. sigma_1 fires at t = 0.5 (h = delta), tau_1 at
    // t = 1.8 (h = 0, a coordinate-2 hit).
    const double dp = std::asin(kA1000.delta());
    crossing::CrossingLog log;
    const auto x2_of = [dp](double t) {
        return t <= 1.0 ? 2.0 * dp * t : 2.0 * dp + (t - 1.0) * (-2.5 * dp);
    };
    double t = 0.0;
    const double dt = 0.125;
    sde::ParticleState prev = at(flow::pi / 2, 0.0, 0.0);
    while (t < 2.0 - 1e-12) {
        t += dt;
        const auto next = at(flow::pi / 2, x2_of(t), t);
        crossing::observe_step(prev, next, log, kA1000);
        prev = next;
    }
    REQUIRE(log.events.size() == 2);
    CHECK(log.events[0].kind == crossing::EventKind::LayerExit);
    CHECK(std::abs(log.events[0].t - 0.5) <= 1e-9);
    CHECK(std::abs(flow::hamiltonian(log.events[0].pos)) >=
          kA1000.delta() - crossing::eps_event);
    CHECK(log.events[1].kind == crossing::EventKind::SeparatrixHit);
    CHECK(std::abs(log.events[1].t - 1.8) <= 1e-9);
    CHECK(log.events[1].coord == 2);
    CHECK(log.sigma().size() == 1);
    CHECK(log.tau().size() == 1);
    CHECK(log.tau_i(2).size() == 1);
    CHECK(log.tau_i_n(2, 1) == doctest::Approx(1.8));
    CHECK(std::isinf(log.tau_i_n(1, 1)));
}

TEST_CASE("ordering, alternation, and event tolerances over an ensemble") {
    harness::EnsembleSpec spec;
    spec.flow = kA1000;
    spec.grid = stats::TimeGrid{{0.01}};
    spec.x0 = {0.0, 0.0};
    spec.paths = 10000;
    spec.seed = 1234;
    const auto records = harness::run_ensemble(spec);

    const double delta = kA1000.delta();
    std::size_t total_tau = 0, total_1 = 0, total_2 = 0, ambiguous = 0;
    for (const auto& rec : records) {
        const auto& events = rec.log.events;
        double prev_t = 0.0;
        for (std::size_t i = 0; i < events.size(); ++i) {
            CHECK(events[i].t >= prev_t);
            prev_t = events[i].t;
            const bool expect_sigma = (i % 2 == 0);
            CHECK(events[i].kind == (expect_sigma ? crossing::EventKind::LayerExit
                                                  : crossing::EventKind::SeparatrixHit));
            if (events[i].kind == crossing::EventKind::LayerExit)
                CHECK(std::abs(flow::hamiltonian(events[i].pos)) >=
                      delta - crossing::eps_event);
            else
                CHECK(std::abs(flow::hamiltonian(events[i].pos)) <= crossing::eps_event);
        }
        total_tau += rec.log.tau().size();
        total_1 += rec.log.tau_i(1).size();
        total_2 += rec.log.tau_i(2).size();
        ambiguous += rec.log.ambiguous_hits();
    }
    // tau^1 and tau^2 partition tau up to corner-ambiguous hits
    CHECK(total_tau == total_1 + total_2 + ambiguous);
    REQUIRE(total_tau > 5000); // the ensemble actually crosses
    CHECK(static_cast<double>(ambiguous) / static_cast<double>(total_tau) < 1e-3);
}

TEST_CASE("probe from outside the target region returns immediately") {
    const flow::Point interior{flow::pi / 2, flow::pi / 2};
    sde::NoiseStream noise(9, 0);
    const auto res = crossing::probe_exit(interior, crossing::ProbeTarget::ExitEdgeRegion,
                                          kA1000, {}, noise);
    CHECK(res.t == 0.0);
    CHECK(res.pos.x1 == interior.x1);
}

TEST_CASE("probe from the separatrix hits it at time zero") {
    sde::NoiseStream noise(9, 1);
    const auto res = crossing::probe_exit({1.0, 0.0}, crossing::ProbeTarget::HitSeparatrix,
                                          kA1000, {}, noise);
    CHECK(res.t == 0.0);
}

TEST_CASE("edge exit times scale like delta^2") {
    // mid-edge start inside E; mean exit time over 1e4 probes <= 20 delta^2
    const double delta = kA1000.delta();
    const flow::Point x0{flow::pi / 2, std::asin(0.5 * delta)};
    REQUIRE(flow::in_edge(flow::classify_region(x0, kA1000)));
    const std::size_t n = 10000;
    std::vector<double> times(n);
    harness::parallel_batches(0, 32, [&](int batch) {
        for (std::size_t p = batch; p < n; p += 32) {
            sde::NoiseStream noise(4242, p);
            times[p] = crossing::probe_exit(x0, crossing::ProbeTarget::ExitEdgeRegion, kA1000,
                                            {}, noise)
                           .t;
        }
    });
    double mean = 0.0;
    for (double v : times) mean += v;
    mean /= static_cast<double>(n);
    CHECK(mean / (delta * delta) <= 20.0);
    CHECK(mean > 0.0);
}

TEST_CASE("fattened corner exit times scale like delta^2 |ln delta|") {
    double ratios[2];
    int k = 0;
    for (const double A : {400.0, 1600.0}) {
        const flow::FlowParams params{A, 1.0, 0.15, 0.30};
        const double delta = params.delta();
        // corner symmetry point inside C': diagonal with h = delta/2
        const double s = std::asin(std::sqrt(0.5 * delta));
        const flow::Point x0{s, s};
        REQUIRE(flow::in_fattened_corner(flow::classify_region(x0, params)));
        const std::size_t n = 2000;
        std::vector<double> times(n);
        harness::parallel_batches(0, 32, [&](int batch) {
            for (std::size_t p = batch; p < n; p += 32) {
                sde::NoiseStream noise(5150, p);
                times[p] = crossing::probe_exit(x0, crossing::ProbeTarget::ExitFattenedCorner,
                                                params, {}, noise)
                               .t;
            }
        });
        double mean = 0.0;
        for (double v : times) mean += v;
        mean /= static_cast<double>(n);
        ratios[k++] = mean / (delta * delta * std::abs(std::log(delta)));
    }
    CHECK(ratios[0] <= 20.0);
    CHECK(ratios[1] <= 20.0);
    const double spread = std::max(ratios[0], ratios[1]) / std::min(ratios[0], ratios[1]);
    CHECK(spread <= 3.0);
}

TEST_CASE("probe timeout throws the dedicated error") {
    const double delta = kA1000.delta();
    const flow::Point x0{flow::pi / 2, std::asin(0.5 * delta)};
    sde::NoiseStream noise(3, 3);
    CHECK_THROWS_AS(crossing::probe_exit(x0, crossing::ProbeTarget::ExitEdgeRegion, kA1000, {},
                                         noise, 1e-7),
                    crossing::ProbeTimeout);
}

TEST_CASE("first layer exit time realizes sigma_1") {
    const flow::Point x0{flow::pi / 2, 0.0};
    sde::NoiseStream n1(77, 0), n2(77, 0);
    const double t1 = crossing::first_layer_exit_time(x0, kA1000, {}, n1);
    const double t2 = crossing::first_layer_exit_time(x0, kA1000, {}, n2);
    CHECK(t1 == t2);
    CHECK(t1 > 0.0);
    CHECK(t1 < 1.0);
}

TEST_CASE("event CSV serialization") {
    std::ostringstream out;
    crossing::write_event_csv_header(out);
    crossing::write_event_csv_row(out, 17, {crossing::EventKind::SeparatrixHit, 0.5,
                                            {3.141592653589793, 1.0}, 2});
    crossing::write_event_csv_row(out, 18, {crossing::EventKind::LayerExit, 0.25, {1.0, 2.0},
                                            std::nullopt});
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "path_index,kind,t,x1,x2,coord");
    std::getline(in, line);
    CHECK(line.substr(0, 17) == "17,SeparatrixHit,");
    CHECK(line.back() == '2');
    std::getline(in, line);
    CHECK(line.substr(0, 12) == "18,LayerExit");
    CHECK(line.back() == ',');
}
