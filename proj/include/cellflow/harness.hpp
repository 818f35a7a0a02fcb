#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cellflow/cellpde.hpp"
#include "cellflow/crossing.hpp"
#include "cellflow/sde.hpp"
#include "cellflow/stats.hpp"

// Configuration, orchestration, and persistence: flat key-value configs with
// one section per module, CSV outputs with sidecar metadata carrying the
// config hash, and a run manifest with per-output checksums. Monte Carlo work
// is scheduled in 32 path batches (batch = path_index mod 32); worker count
// affects scheduling only, never batch membership, so identical configs give
// byte-identical outputs at any worker count.
namespace cellflow::harness {

inline constexpr const char* code_version = "cellflow 0.1.0";
inline constexpr const char* output_root_env = "CELLFLOW_OUT";

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ExperimentKind {
    VarianceCurve,
    CrossingCdf,
    ExitProbe,
    CellPde,
    SupersolutionAudit,
    BoundsSelftest,
};

const char* to_string(ExperimentKind k);

struct GridSpec {
    double t_start = 1e-3;
    double t_end = 4e-2;
    int points = 40;
    bool log_spacing = false;

    stats::TimeGrid build() const;
};

// Start points: a named mesh ("origin", "layer16") or an explicit list.
struct StartSpec {
    std::string mesh = "origin";
    std::vector<flow::Point> points;

    std::vector<flow::Point> resolve(const flow::FlowParams& params) const;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::VarianceCurve;
    flow::FlowParams flow;
    sde::StepPolicy step;
    GridSpec grid;
    StartSpec start;
    std::uint64_t paths = 1000;
    std::uint64_t seed = 1;
    int workers = 0; // 0 = hardware concurrency
    std::string out_dir;

    // exit_probe extras
    crossing::ProbeTarget probe_target = crossing::ProbeTarget::ExitEdgeRegion;
    double probe_cap = 1.0;

    // crossing_cdf extras
    std::vector<int> cdf_orders{1, 2, 4};

    // cell_pde extras
    std::string pde_problem = "chi"; // chi | exit | resolvent
    double pde_lambda = 64.0;
    int pde_n = 0; // 0 = resolution policy
    pde::AdvectionScheme pde_scheme = pde::AdvectionScheme::Upwind1;

    void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization (sorted section.key = value lines); hashed for the
// manifest and the output sidecars.
std::string canonical_config(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct RunManifest {
    std::string config_hash;
    std::string code_version;
    std::string started;
    std::string finished;
    std::map<std::string, std::string> output_checksums; // file name -> fnv1a hex

    void write(const std::string& path) const;
};

// Dispatches the named experiment, writes its tabular outputs plus
// manifest.json under config.out_dir. Throws ConfigError / pde::SolverError /
// crossing::ProbeTimeout on the distinct failure classes.
RunManifest run(const ExperimentConfig& config);

// Emits the figure bundle: the variance-vs-t table with its two regime fits,
// three seeded trajectories on [0, 2], and particle-cloud snapshots at
// t in {0.004, 0.012, 0.040} from the origin (A = 1000, 10^4 paths).
RunManifest reproduce_figures(const std::string& out_dir, int workers = 0);

// Loads a CSV written by this harness; rejects orphan outputs (missing
// sidecar or checksum mismatch). Returns rows of cells, header first.
std::vector<std::vector<std::string>> load_table(const std::string& csv_path);

// Self-contained checks of the closed forms against quadrature and frozen
// oracle values (the bounds_selftest experiment and the `selftest` command).
struct SelftestRow {
    std::string check;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

std::vector<SelftestRow> bounds_selftest();

// ---------------------------------------------------------------------------
// Deterministic ensemble runner (shared by experiments, tests, acceptance).

struct EnsembleSpec {
    flow::FlowParams flow;
    sde::StepPolicy step;
    stats::TimeGrid grid;
    flow::Point x0;
    std::uint64_t paths = 1000;
    std::uint64_t seed = 1;
    std::uint64_t path_index_offset = 0;
    int workers = 0;
    bool track_crossings = true;
};

std::vector<stats::PathRecord> run_ensemble(const EnsembleSpec& spec);

// Records positions at grid times by linear interpolation within the
// enclosing step.
class GridSampler final : public sde::StepObserver {
  public:
    GridSampler(const stats::TimeGrid& grid, flow::Point x0);
    void on_step(const sde::ParticleState& prev, const sde::ParticleState& next) override;
    const std::vector<flow::Point>& positions() const { return at_grid_; }
    std::vector<flow::Point> take_positions() { return std::move(at_grid_); }

  private:
    const std::vector<double>& times_;
    std::size_t next_ = 0;
    std::vector<flow::Point> at_grid_;
};

// 16 start points on {|h| < delta}: four angular stations along the south
// edge of Q0 (near-corner through mid-edge) times four layer levels
// h/delta in {0, 0.45, -0.45, 0.9}.
std::vector<flow::Point> layer16_mesh(const flow::FlowParams& params);

// Runs fn(batch) for batch in [0, n_batches) on `workers` threads.
void parallel_batches(int workers, int n_batches, const std::function<void(int)>& fn);

std::string default_output_root();
std::uint64_t fnv1a(const std::string& bytes);
std::string fnv1a_hex(const std::string& bytes);

} // namespace cellflow::harness
