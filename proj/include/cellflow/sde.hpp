#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

#include "cellflow/flowfield.hpp"

// Euler-Maruyama time stepping of dX = -A v(X) dt + sqrt(2) dW with
// deterministic seeded noise streams. Positions live on the full plane;
// periodicity is never folded into the state, so displacement statistics use
// unwrapped coordinates.
namespace cellflow::sde {

struct ParticleState {
    flow::Point pos;
    double t = 0.0;
};

// Step-size control: effective dt = min(dt_max, dt_drift_frac / A,
// dt_layer_frac * delta^2). The drift term keeps the per-step drift
// displacement below dt_drift_frac; the layer term makes layer-crossing
// events span many steps.
struct StepPolicy {
    double dt_drift_frac = 0.01;
    double dt_layer_frac = 0.05;
    double dt_max = 1e-4;

    double dt_for(const flow::FlowParams& params) const;
};

// A reproducible Gaussian stream: (seed, path_index) fully determines every
// increment. Streams for distinct path indices are independent.
class NoiseStream {
  public:
    NoiseStream(std::uint64_t seed, std::uint64_t path_index);

    // One pair of independent standard normals; advances the draw counter.
    std::pair<double, double> normal_pair();

    std::uint64_t seed() const { return seed_; }
    std::uint64_t path_index() const { return path_index_; }
    std::uint64_t draws() const { return draws_; }

  private:
    std::uint64_t seed_;
    std::uint64_t path_index_;
    std::uint64_t draws_ = 0;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

// One Euler-Maruyama step: pos' = pos - A v(pos) dt + sqrt(2 dt) z.
ParticleState em_step(const ParticleState& s, double dt, std::pair<double, double> z,
                      const flow::FlowParams& params);

class StepObserver {
  public:
    virtual ~StepObserver() = default;
    virtual void on_step(const ParticleState& prev, const ParticleState& next) = 0;
};

// Advances from x0 to t_end with the policy's fixed dt (last step truncated
// to land exactly on t_end), invoking each observer after every step.
// Bitwise reproducible given (seed, path_index, policy, params, t_end).
ParticleState simulate_path(flow::Point x0, double t_end, const StepPolicy& policy,
                            NoiseStream& noise, const flow::FlowParams& params,
                            std::span<StepObserver* const> observers = {});

// Noise-free flow substep: advances xdot = -A v(x) by classical RK4 with
// internal substeps short enough to conserve h to ~1e-9 per unit time.
ParticleState convect_exact(const ParticleState& s, double dt, const flow::FlowParams& params);

} // namespace cellflow::sde
