#include "cellflow/crossing.hpp"

#include <cmath>
#include <limits>

namespace cellflow::crossing {

namespace {

flow::Point lerp(flow::Point a, flow::Point b, double s) {
    return {a.x1 + s * (b.x1 - a.x1), a.x2 + s * (b.x2 - a.x2)};
}

// First parameter in (0, 1] where pred flips from false to true along the
// segment, refined by bisection. pred(0) must be false, pred(1) true.
template <typename Pred>
double bisect_flip(const Pred& pred, int iters) {
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        (pred(mid) ? hi : lo) = mid;
    }
    return hi;
}

} // namespace

const char* to_string(EventKind k) {
    switch (k) {
    case EventKind::SeparatrixHit: return "SeparatrixHit";
    case EventKind::LayerExit: return "LayerExit";
    case EventKind::EdgeExit: return "EdgeExit";
    case EventKind::CornerExit: return "CornerExit";
    }
    return "?";
}

std::vector<double> CrossingLog::tau() const {
    std::vector<double> out;
    for (const auto& e : events)
        if (e.kind == EventKind::SeparatrixHit) out.push_back(e.t);
    return out;
}

std::vector<double> CrossingLog::sigma() const {
    std::vector<double> out;
    for (const auto& e : events)
        if (e.kind == EventKind::LayerExit) out.push_back(e.t);
    return out;
}

std::vector<double> CrossingLog::tau_i(int i) const {
    std::vector<double> out;
    for (const auto& e : events)
        if (e.kind == EventKind::SeparatrixHit && e.coord && *e.coord == i) out.push_back(e.t);
    return out;
}

double CrossingLog::tau_i_n(int i, int n) const {
    int seen = 0;
    for (const auto& e : events) {
        if (e.kind == EventKind::SeparatrixHit && e.coord && *e.coord == i) {
            if (++seen == n) return e.t;
        }
    }
    return std::numeric_limits<double>::infinity();
}

std::size_t CrossingLog::ambiguous_hits() const {
    std::size_t k = 0;
    for (const auto& e : events)
        if (e.kind == EventKind::SeparatrixHit && !e.coord) ++k;
    return k;
}

std::optional<int> classify_hit_coordinate(flow::Point pos, const flow::FlowParams&) {
    const double d1 = std::abs(std::remainder(pos.x1, flow::pi));
    const double d2 = std::abs(std::remainder(pos.x2, flow::pi));
    const bool on1 = d1 < eps_corner;
    const bool on2 = d2 < eps_corner;
    if (on1 == on2) return std::nullopt; // corner-ambiguous (or too far off either line)
    return on1 ? 1 : 2;
}

void observe_step(const sde::ParticleState& prev, const sde::ParticleState& next,
                  CrossingLog& log, const flow::FlowParams& params) {
    const double delta = params.delta();
    if (log.phase == CrossingLog::Phase::Unset) {
        if (std::abs(flow::hamiltonian(prev.pos)) >= delta) {
            // sigma_1 fires at the start: the path begins outside the layer.
            log.events.push_back({EventKind::LayerExit, prev.t, prev.pos, std::nullopt});
            log.phase = CrossingLog::Phase::AwaitSeparatrix;
        } else {
            log.phase = CrossingLog::Phase::AwaitLayerExit;
        }
    }

    // Scan the step's interpolant, handling several phase flips per step.
    double s0 = 0.0;
    flow::Point a = prev.pos;
    const double dt = next.t - prev.t;
    while (s0 < 1.0) {
        const auto at = [&](double s) { return lerp(prev.pos, next.pos, s); };
        if (log.phase == CrossingLog::Phase::AwaitLayerExit) {
            const auto outside = [&](double s) {
                return std::abs(flow::hamiltonian(at(s))) >= delta;
            };
            if (!outside(1.0)) break;
            double s = s0;
            if (!outside(s0)) {
                double lo = s0, hi = 1.0;
                for (int i = 0; i < bisection_iters; ++i) {
                    const double mid = 0.5 * (lo + hi);
                    (outside(mid) ? hi : lo) = mid;
                }
                s = hi;
            }
            const flow::Point pos = at(s);
            log.events.push_back({EventKind::LayerExit, prev.t + s * dt, pos, std::nullopt});
            log.phase = CrossingLog::Phase::AwaitSeparatrix;
            s0 = s;
            a = pos;
        } else {
            const double ha = flow::hamiltonian(a);
            const double hb = flow::hamiltonian(next.pos);
            if (ha == 0.0 || ha * hb >= 0.0) break;
            double lo = s0, hi = 1.0;
            for (int i = 0; i < bisection_iters; ++i) {
                const double mid = 0.5 * (lo + hi);
                (flow::hamiltonian(at(mid)) * ha <= 0.0 ? hi : lo) = mid;
            }
            const double s = 0.5 * (lo + hi);
            const flow::Point pos = at(s);
            log.events.push_back({EventKind::SeparatrixHit, prev.t + s * dt, pos,
                                  classify_hit_coordinate(pos, params)});
            log.phase = CrossingLog::Phase::AwaitLayerExit;
            s0 = s;
            a = pos;
        }
    }
}

namespace {

struct ProbePredicate {
    ProbeTarget target;
    const flow::FlowParams* params;
    std::array<int, 2> home_corner{0, 0};
    double h_sign0 = 0.0;

    bool in_region(flow::Point p) const {
        const flow::RegionTag tag = flow::classify_region(p, *params);
        switch (target) {
        case ProbeTarget::ExitEdgeRegion: return flow::in_edge(tag);
        case ProbeTarget::ExitFattenedCorner: return flow::in_fattened_corner(tag);
        case ProbeTarget::HitDifferentCorner:
            return !(flow::in_corner(tag) && flow::nearest_corner(p) != home_corner);
        case ProbeTarget::HitSeparatrix:
            return flow::hamiltonian(p) * h_sign0 > 0.0;
        }
        return false;
    }
};

EventKind probe_kind(ProbeTarget target) {
    switch (target) {
    case ProbeTarget::ExitEdgeRegion: return EventKind::EdgeExit;
    case ProbeTarget::ExitFattenedCorner: return EventKind::CornerExit;
    case ProbeTarget::HitDifferentCorner: return EventKind::CornerExit;
    case ProbeTarget::HitSeparatrix: return EventKind::SeparatrixHit;
    }
    return EventKind::EdgeExit;
}

} // namespace

ProbeResult probe_exit(flow::Point x0, ProbeTarget target, const flow::FlowParams& params,
                       const sde::StepPolicy& policy, sde::NoiseStream& noise, double t_cap) {
    ProbePredicate pred{target, &params, flow::nearest_corner(x0),
                        flow::hamiltonian(x0) >= 0.0 ? 1.0 : -1.0};
    if (target == ProbeTarget::HitSeparatrix && flow::hamiltonian(x0) == 0.0)
        return {0.0, x0, probe_kind(target)};
    if (!pred.in_region(x0)) return {0.0, x0, probe_kind(target)};

    const double dt = policy.dt_for(params);
    sde::ParticleState state{x0, 0.0};
    while (state.t < t_cap) {
        const sde::ParticleState prev = state;
        state = sde::em_step(prev, dt, noise.normal_pair(), params);
        if (!pred.in_region(state.pos)) {
            const double s = bisect_flip(
                [&](double u) { return !pred.in_region(lerp(prev.pos, state.pos, u)); },
                bisection_iters);
            return {prev.t + s * dt, lerp(prev.pos, state.pos, s), probe_kind(target)};
        }
    }
    throw ProbeTimeout("probe_exit: no region exit before t_cap; raise the cap");
}

double first_layer_exit_time(flow::Point x0, const flow::FlowParams& params,
                             const sde::StepPolicy& policy, sde::NoiseStream& noise,
                             double t_cap) {
    CrossingLog log;
    const double dt = policy.dt_for(params);
    sde::ParticleState state{x0, 0.0};
    while (state.t < t_cap) {
        const sde::ParticleState prev = state;
        state = sde::em_step(prev, dt, noise.normal_pair(), params);
        observe_step(prev, state, log, params);
        for (const auto& ev : log.events)
            if (ev.kind == EventKind::LayerExit) return ev.t;
    }
    throw ProbeTimeout("first_layer_exit_time: no layer exit before t_cap");
}

void write_event_csv_header(std::ostream& out) {
    out << "path_index,kind,t,x1,x2,coord\n";
}

void write_event_csv_row(std::ostream& out, std::uint64_t path_index, const CrossingEvent& ev) {
    out << path_index << ',' << to_string(ev.kind) << ',' << ev.t << ',' << ev.pos.x1 << ','
        << ev.pos.x2 << ',';
    if (ev.coord) out << *ev.coord;
    out << '\n';
}

} // namespace cellflow::crossing
