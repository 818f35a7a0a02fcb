#include "cellflow/sde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cellflow::sde {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t path_index) {
    // Decorrelate nearby (seed, path) pairs before seeding the engine.
    const std::uint64_t a = splitmix64(seed);
    const std::uint64_t b = splitmix64(path_index ^ 0xd1b54a32d192ed03ULL);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(splitmix64(a ^ b))};
    return std::mt19937_64(seq);
}

} // namespace

double StepPolicy::dt_for(const flow::FlowParams& params) const {
    if (!(dt_drift_frac > 0.0 && dt_layer_frac > 0.0 && dt_max > 0.0))
        throw std::invalid_argument("StepPolicy: all fractions must be > 0");
    double dt = dt_max;
    if (params.A > 0.0) {
        dt = std::min(dt, dt_drift_frac / params.A);
        const double d = params.delta();
        dt = std::min(dt, dt_layer_frac * d * d);
    }
    return dt;
}

NoiseStream::NoiseStream(std::uint64_t seed, std::uint64_t path_index)
    : seed_(seed), path_index_(path_index), engine_(make_engine(seed, path_index)) {}

std::pair<double, double> NoiseStream::normal_pair() {
    ++draws_;
    const double a = normal_(engine_);
    const double b = normal_(engine_);
    return {a, b};
}

ParticleState em_step(const ParticleState& s, double dt, std::pair<double, double> z,
                      const flow::FlowParams& params) {
    const flow::Point v = flow::velocity(s.pos);
    const double amp = std::sqrt(2.0 * dt);
    return {{s.pos.x1 - params.A * v.x1 * dt + amp * z.first,
             s.pos.x2 - params.A * v.x2 * dt + amp * z.second},
            s.t + dt};
}

ParticleState simulate_path(flow::Point x0, double t_end, const StepPolicy& policy,
                            NoiseStream& noise, const flow::FlowParams& params,
                            std::span<StepObserver* const> observers) {
    ParticleState state{x0, 0.0};
    if (t_end <= 0.0) return state;
    const double dt = policy.dt_for(params);
    for (std::uint64_t k = 1;; ++k) {
        double tk = static_cast<double>(k) * dt;
        if (tk > t_end) tk = t_end;
        const ParticleState prev = state;
        state = em_step(prev, tk - prev.t, noise.normal_pair(), params);
        state.t = tk; // land on the grid exactly, no accumulation drift
        for (StepObserver* obs : observers) obs->on_step(prev, state);
        if (tk >= t_end) break;
    }
    return state;
}

ParticleState convect_exact(const ParticleState& s, double dt, const flow::FlowParams& params) {
    if (!(dt > 0.0)) throw std::invalid_argument("convect_exact: dt must be > 0");
    if (params.A == 0.0) return {s.pos, s.t + dt};
    // Cap the arc length A*h per RK4 substep; keeps |h| drift ~1e-9 per unit time.
    const double max_arc = 1e-3;
    const int nsub = static_cast<int>(std::ceil(params.A * dt / max_arc));
    const double h = dt / nsub;
    flow::Point x = s.pos;
    const auto rhs = [&params](flow::Point p) -> flow::Point {
        const flow::Point v = flow::velocity(p);
        return {-params.A * v.x1, -params.A * v.x2};
    };
    for (int i = 0; i < nsub; ++i) {
        const flow::Point k1 = rhs(x);
        const flow::Point k2 = rhs({x.x1 + 0.5 * h * k1.x1, x.x2 + 0.5 * h * k1.x2});
        const flow::Point k3 = rhs({x.x1 + 0.5 * h * k2.x1, x.x2 + 0.5 * h * k2.x2});
        const flow::Point k4 = rhs({x.x1 + h * k3.x1, x.x2 + h * k3.x2});
        x.x1 += h / 6.0 * (k1.x1 + 2 * k2.x1 + 2 * k3.x1 + k4.x1);
        x.x2 += h / 6.0 * (k1.x2 + 2 * k2.x2 + 2 * k3.x2 + k4.x2);
    }
    return {x, s.t + dt};
}

} // namespace cellflow::sde
