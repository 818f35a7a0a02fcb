#pragma once

#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellflow/flowfield.hpp"
#include "cellflow/sde.hpp"

// Online detection of the stopping times along a simulated path: separatrix
// hits tau_n, boundary-layer exits sigma_n, coordinate-resolved hits tau^i_n,
// and region-exit probes. Crossing times are refined by bisection on the
// linear interpolant of the step that produced them (a documented O(sqrt(dt))
// bias source relative to a Brownian-bridge correction).
namespace cellflow::crossing {

inline constexpr double eps_event = 1e-10; // |h| tolerance at a refined event
inline constexpr double eps_corner = 1e-6; // coordinate-to-lattice tolerance (radians)
inline constexpr int bisection_iters = 40;

enum class EventKind { SeparatrixHit, LayerExit, EdgeExit, CornerExit };

const char* to_string(EventKind k);

struct CrossingEvent {
    EventKind kind;
    double t;
    flow::Point pos;
    std::optional<int> coord; // 1 or 2 for SeparatrixHit; absent if corner-ambiguous
};

// Ordered event record for one path. The phase alternates between awaiting a
// layer exit (sigma) and awaiting a separatrix hit (tau), starting from the
// path's initial position; 0 = tau_0 <= sigma_1 <= tau_1 <= sigma_2 <= ...
struct CrossingLog {
    enum class Phase { Unset, AwaitLayerExit, AwaitSeparatrix };

    std::vector<CrossingEvent> events;
    Phase phase = Phase::Unset;

    std::vector<double> tau() const;   // SeparatrixHit times
    std::vector<double> sigma() const; // LayerExit times
    // Times of separatrix hits assigned to coordinate i (1 or 2).
    std::vector<double> tau_i(int i) const;
    // Value of tau^i_n (1-based n); +inf when fewer than n hits were observed.
    double tau_i_n(int i, int n) const;
    std::size_t ambiguous_hits() const;
};

// Returns 1 if x1 lies within eps_corner of pi Z and x2 does not, 2
// symmetrically, absent when the hit is corner-ambiguous. Expects |h(pos)|
// <= eps_event (a refined separatrix hit).
std::optional<int> classify_hit_coordinate(flow::Point pos, const flow::FlowParams& params);

// Feed one simulation step into the log; appends refined events when the
// phase's crossing predicate fires inside the step. Initializes the phase
// from `prev` on first use (a start outside the layer records sigma at the
// start time, matching sigma_n = inf{t >= tau_{n-1} : X not in B_delta}).
void observe_step(const sde::ParticleState& prev, const sde::ParticleState& next,
                  CrossingLog& log, const flow::FlowParams& params);

// StepObserver adapter owning a log.
class CrossingTracker final : public sde::StepObserver {
  public:
    explicit CrossingTracker(const flow::FlowParams& params) : params_(params) {}

    void on_step(const sde::ParticleState& prev, const sde::ParticleState& next) override {
        observe_step(prev, next, log_, params_);
    }

    const CrossingLog& log() const { return log_; }
    CrossingLog take_log() { return std::move(log_); }

  private:
    flow::FlowParams params_;
    CrossingLog log_;
};

enum class ProbeTarget { ExitEdgeRegion, ExitFattenedCorner, HitDifferentCorner, HitSeparatrix };

struct ProbeResult {
    double t = 0.0;
    flow::Point pos;
    EventKind kind = EventKind::EdgeExit;
};

struct ProbeTimeout : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Simulates from x0 until the target's region-exit predicate fires; returns
// the refined exit time and location. A start already outside the target
// region returns (0, x0) immediately. Throws ProbeTimeout if the predicate
// has not fired by t_cap (a mis-set cap, not a flow property).
ProbeResult probe_exit(flow::Point x0, ProbeTarget target, const flow::FlowParams& params,
                       const sde::StepPolicy& policy, sde::NoiseStream& noise,
                       double t_cap = 1.0);

// Realizes sigma_1: simulates from x0 until the path first leaves B_delta
// and returns the refined exit time. Throws ProbeTimeout past t_cap.
double first_layer_exit_time(flow::Point x0, const flow::FlowParams& params,
                             const sde::StepPolicy& policy, sde::NoiseStream& noise,
                             double t_cap = 1.0);

// Flat record format: path_index, kind, t, x1, x2, coord.
void write_event_csv_header(std::ostream& out);
void write_event_csv_row(std::ostream& out, std::uint64_t path_index, const CrossingEvent& ev);

} // namespace cellflow::crossing
