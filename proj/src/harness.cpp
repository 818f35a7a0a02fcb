#include "cellflow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cellflow/bounds.hpp"

namespace cellflow::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Collects rows, then writes the CSV plus a sidecar metadata record carrying
// the config hash and the file checksum.
class TableWriter {
  public:
    TableWriter(std::string header) { body_ = std::move(header) + "\n"; }

    template <typename... Cells>
    void row(const Cells&... cells) {
        bool first = true;
        ((body_ += (first ? "" : ","), body_ += cell_str(cells), first = false), ...);
        body_ += "\n";
    }

    // Append an already-formed CSV line.
    void line(const std::string& l) {
        body_ += l;
        body_ += "\n";
    }

    std::string finish(const std::string& dir, const std::string& name,
                       const std::string& cfg_hash, RunManifest& manifest) {
        const fs::path path = fs::path(dir) / name;
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << body_;
        out.close();
        const std::string checksum = fnv1a_hex(body_);
        json meta;
        meta["config_hash"] = cfg_hash;
        meta["checksum"] = checksum;
        meta["code_version"] = code_version;
        meta["created"] = iso_now();
        std::ofstream side(path.string() + ".meta.json");
        side << meta.dump(2) << "\n";
        manifest.output_checksums[name] = checksum;
        return checksum;
    }

  private:
    static std::string cell_str(const std::string& s) { return s; }
    static std::string cell_str(const char* s) { return s; }
    static std::string cell_str(double v) { return format_double(v); }
    static std::string cell_str(int v) { return std::to_string(v); }
    static std::string cell_str(std::uint64_t v) { return std::to_string(v); }
    static std::string cell_str(bool v) { return v ? "PASS" : "FAIL"; }

    std::string body_;
};

// ---------------------------------------------------------------------------
// Config parsing: flat ini-style text, one section per module.

struct RawConfig {
    std::map<std::string, std::string> kv;
    mutable std::map<std::string, bool> used;

    std::optional<std::string> get(const std::string& key) const {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        used[key] = true;
        return it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        const auto v = get(key);
        if (!v) return fallback;
        try {
            return std::stod(*v);
        } catch (const std::exception&) {
            throw ConfigError("config: bad number for " + key + ": " + *v);
        }
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        const auto v = get(key);
        if (!v) return fallback;
        try {
            return std::stoull(*v);
        } catch (const std::exception&) {
            throw ConfigError("config: bad integer for " + key + ": " + *v);
        }
    }
    std::string get_str(const std::string& key, std::string fallback) const {
        const auto v = get(key);
        return v ? *v : fallback;
    }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

RawConfig tokenize_config(const std::string& text) {
    RawConfig raw;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos || section.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = section + "." + trim(line.substr(0, eq));
        raw.kv[key] = trim(line.substr(eq + 1));
    }
    return raw;
}

ExperimentKind parse_kind(const std::string& s) {
    if (s == "variance_curve") return ExperimentKind::VarianceCurve;
    if (s == "crossing_cdf") return ExperimentKind::CrossingCdf;
    if (s == "exit_probe") return ExperimentKind::ExitProbe;
    if (s == "cell_pde") return ExperimentKind::CellPde;
    if (s == "supersolution_audit") return ExperimentKind::SupersolutionAudit;
    if (s == "bounds_selftest") return ExperimentKind::BoundsSelftest;
    throw ConfigError("config: unknown experiment kind: " + s);
}

crossing::ProbeTarget parse_probe_target(const std::string& s) {
    if (s == "edge") return crossing::ProbeTarget::ExitEdgeRegion;
    if (s == "fattened_corner") return crossing::ProbeTarget::ExitFattenedCorner;
    if (s == "different_corner") return crossing::ProbeTarget::HitDifferentCorner;
    if (s == "separatrix") return crossing::ProbeTarget::HitSeparatrix;
    throw ConfigError("config: unknown probe target: " + s);
}

std::vector<flow::Point> parse_points(const std::string& s) {
    std::vector<flow::Point> pts;
    std::istringstream in(s);
    std::string chunk;
    while (std::getline(in, chunk, ';')) {
        chunk = trim(chunk);
        if (chunk.empty()) continue;
        std::istringstream pair(chunk);
        flow::Point p;
        if (!(pair >> p.x1 >> p.x2)) throw ConfigError("config: bad start point: " + chunk);
        pts.push_back(p);
    }
    return pts;
}

} // namespace

const char* to_string(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::VarianceCurve: return "variance_curve";
    case ExperimentKind::CrossingCdf: return "crossing_cdf";
    case ExperimentKind::ExitProbe: return "exit_probe";
    case ExperimentKind::CellPde: return "cell_pde";
    case ExperimentKind::SupersolutionAudit: return "supersolution_audit";
    case ExperimentKind::BoundsSelftest: return "bounds_selftest";
    }
    return "?";
}

stats::TimeGrid GridSpec::build() const {
    if (points < 2) throw ConfigError("grid: need at least 2 points");
    return log_spacing ? stats::TimeGrid::log_spaced(t_start, t_end, points)
                       : stats::TimeGrid::linear(t_start, t_end, points);
}

std::vector<flow::Point> StartSpec::resolve(const flow::FlowParams& params) const {
    if (mesh == "origin") return {flow::Point{0.0, 0.0}};
    if (mesh == "layer16") return layer16_mesh(params);
    if (mesh == "explicit") {
        if (points.empty()) throw ConfigError("start: explicit mesh with no points");
        return points;
    }
    throw ConfigError("start: unknown mesh '" + mesh + "'");
}

void ExperimentConfig::validate() const {
    flow.validate();
    if (paths < 1) throw ConfigError("experiment: paths must be >= 1");
    if (workers < 0) throw ConfigError("experiment: workers must be >= 0");
    start.resolve(flow);
    if (kind == ExperimentKind::CellPde && pde_problem != "chi" && pde_problem != "exit" &&
        pde_problem != "resolvent")
        throw ConfigError("pde: problem must be chi | exit | resolvent");
}

ExperimentConfig parse_config_text(const std::string& text) {
    const RawConfig raw = tokenize_config(text);
    ExperimentConfig cfg;
    cfg.kind = parse_kind(raw.get_str("experiment.kind", "variance_curve"));
    cfg.seed = raw.get_u64("experiment.seed", 1);
    cfg.paths = raw.get_u64("experiment.paths", 1000);
    cfg.workers = static_cast<int>(raw.get_u64("experiment.workers", 0));
    cfg.out_dir = raw.get_str("experiment.out_dir", "");

    cfg.flow.A = raw.get_double("flow.A", cfg.flow.A);
    cfg.flow.N = raw.get_double("flow.N", cfg.flow.N);
    cfg.flow.beta0 = raw.get_double("flow.beta0", cfg.flow.beta0);
    cfg.flow.beta0_prime = raw.get_double("flow.beta0_prime", cfg.flow.beta0_prime);

    cfg.step.dt_drift_frac = raw.get_double("step.dt_drift_frac", cfg.step.dt_drift_frac);
    cfg.step.dt_layer_frac = raw.get_double("step.dt_layer_frac", cfg.step.dt_layer_frac);
    cfg.step.dt_max = raw.get_double("step.dt_max", cfg.step.dt_max);

    cfg.grid.t_start = raw.get_double("grid.t_start", cfg.grid.t_start);
    cfg.grid.t_end = raw.get_double("grid.t_end", cfg.grid.t_end);
    cfg.grid.points = static_cast<int>(raw.get_u64("grid.points", cfg.grid.points));
    cfg.grid.log_spacing = raw.get_str("grid.spacing", "linear") == "log";

    cfg.start.mesh = raw.get_str("start.mesh", "origin");
    if (const auto pts = raw.get("start.points")) cfg.start.points = parse_points(*pts);

    cfg.probe_target = parse_probe_target(raw.get_str("probe.target", "edge"));
    cfg.probe_cap = raw.get_double("probe.cap", cfg.probe_cap);

    if (const auto orders = raw.get("cdf.orders")) {
        cfg.cdf_orders.clear();
        std::istringstream in(*orders);
        int n;
        while (in >> n) cfg.cdf_orders.push_back(n);
        if (cfg.cdf_orders.empty()) throw ConfigError("cdf: empty orders");
    }

    cfg.pde_problem = raw.get_str("pde.problem", cfg.pde_problem);
    cfg.pde_lambda = raw.get_double("pde.lambda", cfg.pde_lambda);
    cfg.pde_n = static_cast<int>(raw.get_u64("pde.n", 0));
    const std::string scheme = raw.get_str("pde.scheme", "upwind1");
    if (scheme == "upwind1")
        cfg.pde_scheme = pde::AdvectionScheme::Upwind1;
    else if (scheme == "limited2")
        cfg.pde_scheme = pde::AdvectionScheme::Limited2;
    else if (scheme == "expfit")
        cfg.pde_scheme = pde::AdvectionScheme::ExpFit;
    else
        throw ConfigError("pde: unknown scheme " + scheme);

    for (const auto& [key, value] : raw.kv)
        if (!raw.used[key]) throw ConfigError("config: unknown key '" + key + "'");
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string canonical_config(const ExperimentConfig& c) {
    std::map<std::string, std::string> kv;
    kv["experiment.kind"] = to_string(c.kind);
    kv["experiment.seed"] = std::to_string(c.seed);
    kv["experiment.paths"] = std::to_string(c.paths);
    kv["flow.A"] = format_double(c.flow.A);
    kv["flow.N"] = format_double(c.flow.N);
    kv["flow.beta0"] = format_double(c.flow.beta0);
    kv["flow.beta0_prime"] = format_double(c.flow.beta0_prime);
    kv["step.dt_drift_frac"] = format_double(c.step.dt_drift_frac);
    kv["step.dt_layer_frac"] = format_double(c.step.dt_layer_frac);
    kv["step.dt_max"] = format_double(c.step.dt_max);
    kv["grid.t_start"] = format_double(c.grid.t_start);
    kv["grid.t_end"] = format_double(c.grid.t_end);
    kv["grid.points"] = std::to_string(c.grid.points);
    kv["grid.spacing"] = c.grid.log_spacing ? "log" : "linear";
    kv["start.mesh"] = c.start.mesh;
    std::string pts;
    for (const auto& p : c.start.points)
        pts += format_double(p.x1) + " " + format_double(p.x2) + ";";
    kv["start.points"] = pts;
    kv["probe.target"] = std::to_string(static_cast<int>(c.probe_target));
    kv["probe.cap"] = format_double(c.probe_cap);
    std::string orders;
    for (int n : c.cdf_orders) orders += std::to_string(n) + " ";
    kv["cdf.orders"] = orders;
    kv["pde.problem"] = c.pde_problem;
    kv["pde.lambda"] = format_double(c.pde_lambda);
    kv["pde.n"] = std::to_string(c.pde_n);
    kv["pde.scheme"] = c.pde_scheme == pde::AdvectionScheme::Upwind1   ? "upwind1"
                       : c.pde_scheme == pde::AdvectionScheme::Limited2 ? "limited2"
                                                                        : "expfit";
    // worker count and out_dir affect scheduling and placement only, never
    // the statistical content, so they stay out of the hash.
    std::string blob;
    for (const auto& [k, v] : kv) blob += k + "=" + v + "\n";
    return blob;
}

std::string config_hash(const ExperimentConfig& config) {
    return fnv1a_hex(canonical_config(config));
}

void RunManifest::write(const std::string& path) const {
    json j;
    j["config_hash"] = config_hash;
    j["code_version"] = code_version;
    j["started"] = started;
    j["finished"] = finished;
    j["outputs"] = output_checksums;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a_hex(const std::string& bytes) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

std::string default_output_root() {
    if (const char* env = std::getenv(output_root_env)) return env;
    return "out";
}

void parallel_batches(int workers, int n_batches, const std::function<void(int)>& fn) {
    int w = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
    w = std::clamp(w, 1, n_batches);
    if (w == 1) {
        for (int b = 0; b < n_batches; ++b) fn(b);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (int i = 0; i < w; ++i)
        pool.emplace_back([&] {
            for (int b = next.fetch_add(1); b < n_batches; b = next.fetch_add(1)) fn(b);
        });
    for (auto& th : pool) th.join();
}

GridSampler::GridSampler(const stats::TimeGrid& grid, flow::Point)
    : times_(grid.times) {
    at_grid_.reserve(times_.size());
}

void GridSampler::on_step(const sde::ParticleState& prev, const sde::ParticleState& next) {
    while (next_ < times_.size() && times_[next_] <= next.t) {
        const double tk = times_[next_];
        const double span = next.t - prev.t;
        const double s = span > 0.0 ? (tk - prev.t) / span : 1.0;
        at_grid_.push_back({prev.pos.x1 + s * (next.pos.x1 - prev.pos.x1),
                            prev.pos.x2 + s * (next.pos.x2 - prev.pos.x2)});
        ++next_;
    }
}

std::vector<flow::Point> layer16_mesh(const flow::FlowParams& params) {
    const double delta = params.delta();
    const std::array<double, 4> stations{0.12, flow::pi / 4, flow::pi / 2, 3 * flow::pi / 4};
    const std::array<double, 4> levels{0.0, 0.45, -0.45, 0.9};
    std::vector<flow::Point> mesh;
    mesh.reserve(16);
    for (const double x1 : stations)
        for (const double lvl : levels) {
            const double h = lvl * delta;
            mesh.push_back({x1, std::asin(h / std::sin(x1))});
        }
    return mesh;
}

std::vector<stats::PathRecord> run_ensemble(const EnsembleSpec& spec) {
    spec.flow.validate();
    spec.grid.validate();
    const double t_end = spec.grid.times.back();
    std::vector<stats::PathRecord> records(spec.paths);
    parallel_batches(spec.workers, stats::n_batches, [&](int batch) {
        for (std::uint64_t p = batch; p < spec.paths;
             p += static_cast<std::uint64_t>(stats::n_batches)) {
            sde::NoiseStream noise(spec.seed, spec.path_index_offset + p);
            GridSampler sampler(spec.grid, spec.x0);
            crossing::CrossingTracker tracker(spec.flow);
            std::array<sde::StepObserver*, 2> obs{&sampler, &tracker};
            const std::span<sde::StepObserver* const> view(obs.data(),
                                                           spec.track_crossings ? 2u : 1u);
            sde::simulate_path(spec.x0, t_end, spec.step, noise, spec.flow, view);
            auto& rec = records[p];
            rec.path_index = spec.path_index_offset + p;
            rec.x0 = spec.x0;
            rec.at_grid = sampler.take_positions();
            rec.log = tracker.take_log();
        }
    });
    return records;
}

// ---------------------------------------------------------------------------
// Self-contained analytic checks.

namespace {

struct DensityCtx {
    int n;
    double delta, c0, s; // s used by the Laplace checks
};

// Integrals over t transformed by t = (n delta / c0)^2 / u^2; the op is
// evaluated through the transform, so the quadrature remains an independent
// route to the closed forms it checks.
double density_u_integrand(double u, const void* ctx) {
    const auto& c = *static_cast<const DensityCtx*>(ctx);
    const double z = c.n * c.delta / c.c0;
    const double t = z * z / (u * u);
    return bounds::nth_crossing_density(c.n, c.delta, c.c0, t) * 2.0 * z * z / (u * u * u);
}

double density_laplace_integrand(double u, const void* ctx) {
    const auto& c = *static_cast<const DensityCtx*>(ctx);
    const double z = c.n * c.delta / c.c0;
    const double t = z * z / (u * u);
    return std::exp(-c.s * t) * bounds::nth_crossing_density(c.n, c.delta, c.c0, t) * 2.0 * z *
           z / (u * u * u);
}

} // namespace

std::vector<SelftestRow> bounds_selftest() {
    std::vector<SelftestRow> rows;
    const auto check = [&rows](std::string name, double value, double threshold) {
        rows.push_back({std::move(name), value, threshold, value <= threshold});
    };

    // Quadrature identity (closed-form antiderivative vs adaptive quadrature).
    check("quad_identity[t=1,s0=0,s1=1/2]", bounds::quad_identity_check(1.0, 0.0, 0.5), 1e-8);
    check("quad_identity[t=1,s0=1/4,s1=1/2]", bounds::quad_identity_check(1.0, 0.25, 0.5), 1e-8);
    check("quad_identity[near-singular]",
          bounds::quad_identity_check(1.0, 0.0, 1.0 - 1e-6), 1e-6);

    // Frozen oracle values.
    check("erf_upper_cdf[arg=1]-vs-oracle",
          std::abs(bounds::erf_upper_cdf(1, 0.1, 0.1, 1.0) - 0.15729920705028513), 1e-12);
    check("log_lower_cdf[exact-arithmetic]",
          std::abs(bounds::log_lower_cdf(1, std::exp(-1.0), 1.0, 4.0 * std::exp(-2.0)) - 0.5),
          1e-12);
    check("fa_convolve[a=b=1,t=4]-vs-oracle",
          std::abs(bounds::fa_convolve(1.0, 1.0, 4.0) - 0.13397459621556135), 1e-12);
    check("fa_convolve[boundary-zero]", std::abs(bounds::fa_convolve(1.0, 1.0, 2.0)), 1e-12);

    // Density normalization and CDF match, via the u-substitution quadrature.
    for (const int n : {1, 3}) {
        DensityCtx ctx{n, 0.05, 1.0, 0.0};
        const double mass =
            bounds::adaptive_gk15(density_u_integrand, &ctx, 1e-12, 9.0, 1e-12, 1e-11, 60);
        check("density_mass[n=" + std::to_string(n) + "]", std::abs(mass - 1.0), 1e-8);
    }
    {
        DensityCtx ctx{2, 0.05, 1.0, 0.0};
        const double t = 0.02;
        const double u_t = (ctx.n * ctx.delta / ctx.c0) / std::sqrt(t);
        const double cdf =
            bounds::adaptive_gk15(density_u_integrand, &ctx, u_t, 9.0, 1e-12, 1e-11, 60);
        check("density_cdf_matches_erf[n=2]",
              std::abs(cdf - bounds::erf_upper_cdf(2, ctx.delta, ctx.c0, t)), 1e-8);
    }

    // f_b * f_a' >= f_{a+b} on random pairs.
    {
        std::mt19937 rng(12345);
        std::uniform_real_distribution<double> dist(0.05, 2.0);
        double worst = 0.0;
        for (int k = 0; k < 100; ++k) {
            const double a = dist(rng), b = dist(rng);
            for (int j = 1; j <= 400; ++j) {
                const double t = 4.0 * (a + b) * (a + b) * j / 400.0;
                worst = std::min(worst, bounds::fa_convolve(a, b, t) - bounds::fa(a + b, t));
            }
        }
        check("fa_convolve_dominates_fab[100 pairs]", -worst, 1e-12);
    }

    // Laplace transform closed form and the n-fold product rule.
    {
        DensityCtx ctx{1, 0.05, 1.0, 3.0};
        const double numeric =
            bounds::adaptive_gk15(density_laplace_integrand, &ctx, 1e-12, 9.0, 1e-13, 1e-12, 60);
        check("laplace_gprime[s=3]",
              std::abs(numeric - bounds::laplace_gprime(3.0, 0.05, 1.0)), 1e-7);
    }
    {
        DensityCtx ctx{3, 0.05, 1.0, 2.0};
        const double numeric =
            bounds::adaptive_gk15(density_laplace_integrand, &ctx, 1e-12, 9.0, 1e-13, 1e-12, 60);
        const double product = std::pow(bounds::laplace_gprime(2.0, 0.05, 1.0), 3);
        check("laplace_product_rule[n=3]", std::abs(numeric - product), 1e-6);
    }
    check("laplace_gprime[s=0]", std::abs(bounds::laplace_gprime(0.0, 0.1, 2.0) - 1.0), 0.0);
    {
        const double c0 = 2.0, delta = 0.1;
        const double s = c0 * c0 / (4.0 * delta * delta);
        check("laplace_gprime[exponent=-1]",
              std::abs(bounds::laplace_gprime(s, delta, c0) - std::exp(-1.0)), 1e-15);
    }

    // Crossing-count sum: self-similar scaling over two decades of t
    // (in the dense regime delta << sqrt(t)).
    {
        const double delta = 1e-3, c = 1.0;
        double lo = 1e300, hi = 0.0;
        for (const double t : {1e-2, 4e-2, 1e-1, 4e-1, 1.0}) {
            const double ratio =
                bounds::expected_crossings_sum(delta, c, t) * delta / std::sqrt(t);
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
        }
        check("crossings_sum_scaling[2 decades]", hi / lo - 1.0, 0.01);
        check("crossings_sum_no_crossings", bounds::expected_crossings_sum(1.0, 1.0, 0.01),
              1e-14);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Experiments.

namespace {

std::string resolve_out_dir(const ExperimentConfig& config) {
    std::string dir = config.out_dir;
    if (dir.empty())
        dir = (fs::path(default_output_root()) / to_string(config.kind)).string();
    fs::create_directories(dir);
    return dir;
}

void run_variance_curve(const ExperimentConfig& config, const std::string& dir,
                        const std::string& hash, RunManifest& manifest) {
    const auto starts = config.start.resolve(config.flow);
    const auto grid = config.grid.build();
    TableWriter table("time,statistic,value,stderr");
    TableWriter start_table("start,x1,x2");
    const bool multi = starts.size() > 1;
    for (std::size_t s = 0; s < starts.size(); ++s) {
        start_table.row(s, starts[s].x1, starts[s].x2);
        EnsembleSpec spec{config.flow, config.step,          grid,
                          starts[s],   config.paths,         config.seed,
                          s * config.paths, config.workers,  true};
        const auto records = run_ensemble(spec);
        const auto curve = stats::variance_curve(records, grid);
        const std::string suffix = multi ? "@start" + std::to_string(s) : "";
        for (std::size_t k = 0; k < grid.times.size(); ++k) {
            table.row(grid.times[k], "msd" + suffix, curve.msd[k], curve.msd_se[k]);
            table.row(grid.times[k], "var_x1" + suffix, curve.var_x1[k], 0.0);
            table.row(grid.times[k], "var_x2" + suffix, curve.var_x2[k], 0.0);
            table.row(grid.times[k], "mean_crossings" + suffix, curve.mean_crossings[k], 0.0);
        }
    }
    table.finish(dir, "variance.csv", hash, manifest);
    start_table.finish(dir, "starts.csv", hash, manifest);
}

void run_crossing_cdf(const ExperimentConfig& config, const std::string& dir,
                      const std::string& hash, RunManifest& manifest) {
    const auto starts = config.start.resolve(config.flow);
    const auto grid = config.grid.build();
    EnsembleSpec spec{config.flow, config.step, grid,          starts.front(), config.paths,
                      config.seed, 0,           config.workers, true};
    const auto records = run_ensemble(spec);
    TableWriter table("time,statistic,value,stderr");
    TableWriter fits("statistic,value");
    for (const int i : {1, 2}) {
        for (const int n : config.cdf_orders) {
            const auto cdf = stats::crossing_cdf(records, i, n, grid);
            const std::string name =
                "cdf_tau" + std::to_string(i) + "_n" + std::to_string(n);
            for (std::size_t k = 0; k < grid.times.size(); ++k)
                table.row(grid.times[k], name, cdf.value[k], cdf.dkw_band);
            fits.row("c_upper[" + name + "]",
                     stats::fit_c_upper(grid, cdf, n, config.flow.delta()));
            fits.row("c_lower[" + name + "]",
                     stats::fit_c_lower(grid, cdf, n, config.flow.delta()));
        }
    }
    table.finish(dir, "crossing_cdf.csv", hash, manifest);
    fits.finish(dir, "fitted_constants.csv", hash, manifest);
}

void run_exit_probe(const ExperimentConfig& config, const std::string& dir,
                    const std::string& hash, RunManifest& manifest) {
    const auto starts = config.start.resolve(config.flow);
    const double delta = config.flow.delta();
    TableWriter events("path_index,kind,t,x1,x2,coord");
    TableWriter summary("start,x1,x2,trials,reentry_count,mean_exit_time,p_hat");
    std::vector<stats::ProbeOutcomeCount> outcomes;

    std::vector<std::vector<crossing::ProbeResult>> results(starts.size());
    for (std::size_t s = 0; s < starts.size(); ++s) results[s].resize(config.paths);
    parallel_batches(config.workers, stats::n_batches, [&](int batch) {
        for (std::size_t s = 0; s < starts.size(); ++s)
            for (std::uint64_t p = batch; p < config.paths;
                 p += static_cast<std::uint64_t>(stats::n_batches)) {
                sde::NoiseStream noise(config.seed, s * config.paths + p);
                results[s][p] = crossing::probe_exit(starts[s], config.probe_target,
                                                     config.flow, config.step, noise,
                                                     config.probe_cap);
            }
    });

    for (std::size_t s = 0; s < starts.size(); ++s) {
        std::size_t reentry = 0;
        double mean_t = 0.0;
        for (std::uint64_t p = 0; p < config.paths; ++p) {
            const auto& r = results[s][p];
            crossing::CrossingEvent ev{r.kind, r.t, r.pos, std::nullopt};
            std::ostringstream line;
            crossing::write_event_csv_row(line, s * config.paths + p, ev);
            std::string str = line.str();
            if (!str.empty() && str.back() == '\n') str.pop_back();
            events.line(str);
            mean_t += r.t;
            // Exits still inside the layer re-entered a corner region.
            if (std::abs(flow::hamiltonian(r.pos)) < 0.999 * delta) ++reentry;
        }
        mean_t /= static_cast<double>(config.paths);
        const double p_hat = static_cast<double>(reentry) / static_cast<double>(config.paths);
        summary.row(s, starts[s].x1, starts[s].x2, static_cast<std::uint64_t>(config.paths),
                    reentry, mean_t, p_hat);
        outcomes.push_back({starts[s], config.paths, reentry});
    }
    const auto est = stats::corner_reentry_estimate(outcomes);
    summary.row("max", 0.0, 0.0, static_cast<std::uint64_t>(est.trials), std::size_t{0},
                0.0, est.p_hat);
    events.finish(dir, "probe_events.csv", hash, manifest);
    summary.finish(dir, "probe_summary.csv", hash, manifest);
}

void write_field_table(const pde::CellField& f, const std::string& dir, const std::string& name,
                       const std::string& hash, RunManifest& manifest) {
    std::ostringstream body;
    pde::write_field_csv(body, f);
    std::istringstream lines(body.str());
    std::string line;
    std::getline(lines, line);
    TableWriter table(line);
    while (std::getline(lines, line)) table.line(line);
    table.finish(dir, name, hash, manifest);
}

void run_cell_pde(const ExperimentConfig& config, const std::string& dir,
                  const std::string& hash, RunManifest& manifest) {
    const pde::PeriodicGrid grid =
        config.pde_n > 0 ? pde::PeriodicGrid{config.pde_n} : pde::PeriodicGrid::for_peclet(config.flow.A);
    pde::SolveOptions opts;
    opts.scheme = config.pde_scheme;
    if (config.pde_problem == "chi") {
        const auto sol = pde::solve_chi(config.flow.A, grid, opts);
        TableWriter deff("A,D11,D22,D12,resolution");
        deff.row(config.flow.A, sol.d_eff.d11, sol.d_eff.d22, sol.d_eff.d12, grid.n);
        deff.finish(dir, "deff.csv", hash, manifest);
        for (const auto* f : {&sol.chi1, &sol.chi2})
            write_field_table(*f, dir, f->name + ".csv", hash, manifest);
    } else if (config.pde_problem == "exit") {
        TableWriter summary("edge,min_value,max_value,mid_layer_value");
        const double delta = config.flow.delta();
        std::vector<pde::CellField> fields;
        for (const auto edge :
             {pde::Edge::South, pde::Edge::East, pde::Edge::North, pde::Edge::West}) {
            fields.push_back(pde::solve_exit_probability(config.flow.A, edge, grid, opts));
            const auto& f = fields.back();
            // Mid-edge evaluation point on {h = delta} nearest this edge.
            const double a = std::asin(std::min(1.0, delta));
            flow::Point probe{flow::pi / 2, a};
            if (edge == pde::Edge::East) probe = {flow::pi - a, flow::pi / 2};
            if (edge == pde::Edge::North) probe = {flow::pi / 2, flow::pi - a};
            if (edge == pde::Edge::West) probe = {a, flow::pi / 2};
            summary.row(pde::to_string(edge), f.min_value(), f.max_value(), f.interp(probe));
            write_field_table(f, dir, f.name + ".csv", hash, manifest);
        }
        summary.finish(dir, "exit_summary.csv", hash, manifest);
    } else {
        const auto sol =
            pde::solve_resolvent(config.flow.A, config.pde_lambda, grid, config.flow.N, opts);
        const double delta = config.flow.delta();
        TableWriter summary("lambda,sup_layer,normalized");
        summary.row(sol.lambda, sol.sup_layer,
                    sol.sup_layer * std::sqrt(sol.lambda) /
                        (delta * std::abs(std::log(delta))));
        summary.finish(dir, "resolvent_summary.csv", hash, manifest);
        write_field_table(sol.phi, dir, "resolvent.csv", hash, manifest);
    }
}

void run_supersolution_audit(const ExperimentConfig& config, const std::string& dir,
                             const std::string& hash, RunManifest& manifest) {
    TableWriter table(
        "candidate,A,required,min_residual,pass,alpha,gamma2,c0,lambda,xbar1,gamma0,"
        "exact_interior,glue_left,glue_right");
    for (const auto name :
         {pde::Supersolution::EdgeQuadratic, pde::Supersolution::CornerG0G1,
          pde::Supersolution::ExitExponential, pde::Supersolution::PsiPlus,
          pde::Supersolution::ResolventEdge}) {
        const auto rep =
            pde::verify_supersolution({name, {}, {}, {}, {}}, config.flow.A, config.flow);
        table.row(pde::to_string(name), config.flow.A, rep.required_level, rep.min_residual,
                  rep.pass, rep.alpha, rep.gamma2, rep.c0, rep.lambda, rep.xbar1, rep.gamma0,
                  rep.exact_interior_value, rep.glue_left, rep.glue_right);
    }
    table.finish(dir, "supersolution_audit.csv", hash, manifest);
}

void run_bounds_selftest(const std::string& dir, const std::string& hash,
                         RunManifest& manifest) {
    TableWriter table("check,value,threshold,result");
    for (const auto& row : bounds_selftest())
        table.row(row.check, row.value, row.threshold, row.pass);
    table.finish(dir, "selftest.csv", hash, manifest);
}

} // namespace

RunManifest run(const ExperimentConfig& config) {
    config.validate();
    RunManifest manifest;
    manifest.config_hash = config_hash(config);
    manifest.code_version = code_version;
    manifest.started = iso_now();
    const std::string dir = resolve_out_dir(config);

    switch (config.kind) {
    case ExperimentKind::VarianceCurve:
        run_variance_curve(config, dir, manifest.config_hash, manifest);
        break;
    case ExperimentKind::CrossingCdf:
        run_crossing_cdf(config, dir, manifest.config_hash, manifest);
        break;
    case ExperimentKind::ExitProbe:
        run_exit_probe(config, dir, manifest.config_hash, manifest);
        break;
    case ExperimentKind::CellPde:
        run_cell_pde(config, dir, manifest.config_hash, manifest);
        break;
    case ExperimentKind::SupersolutionAudit:
        run_supersolution_audit(config, dir, manifest.config_hash, manifest);
        break;
    case ExperimentKind::BoundsSelftest:
        run_bounds_selftest(dir, manifest.config_hash, manifest);
        break;
    }

    manifest.finished = iso_now();
    manifest.write((fs::path(dir) / "manifest.json").string());
    return manifest;
}

RunManifest reproduce_figures(const std::string& out_dir, int workers) {
    ExperimentConfig config;
    config.kind = ExperimentKind::VarianceCurve;
    config.flow.A = 1000.0;
    config.paths = 10000;
    config.seed = 20240102;
    config.workers = workers;
    config.grid = GridSpec{1e-3, 4e-2, 40, false};
    config.validate();

    RunManifest manifest;
    manifest.config_hash = config_hash(config);
    manifest.code_version = code_version;
    manifest.started = iso_now();
    const std::string dir = out_dir.empty()
                                ? (fs::path(default_output_root()) / "figures").string()
                                : out_dir;
    fs::create_directories(dir);
    const std::string hash = manifest.config_hash;

    // (a) Variance curve with the two regime fits.
    const auto grid = config.grid.build();
    EnsembleSpec spec{config.flow, config.step, grid, {0.0, 0.0}, config.paths,
                      config.seed, 0,           workers, true};
    const auto records = run_ensemble(spec);
    const auto curve = stats::variance_curve(records, grid);
    TableWriter var_table("time,statistic,value,stderr");
    for (std::size_t k = 0; k < grid.times.size(); ++k)
        var_table.row(grid.times[k], "msd", curve.msd[k], curve.msd_se[k]);
    var_table.finish(dir, "fit_var.csv", hash, manifest);

    const auto fits = stats::fit_regimes(grid, curve.msd, 0.015);
    TableWriter fit_table("window,slope,intercept,r2,slope_se,points");
    fit_table.row("early:(msd)^2~t", fits.early.slope, fits.early.intercept, fits.early.r2,
                  fits.early.slope_se, fits.early.points);
    fit_table.row("late:msd~t", fits.late.slope, fits.late.intercept, fits.late.r2,
                  fits.late.slope_se, fits.late.points);
    fit_table.finish(dir, "regime_fits.csv", hash, manifest);

    // (b) Three sample trajectories for 0 <= t <= 2.
    const auto traj_grid = stats::TimeGrid::linear(2e-3, 2.0, 1000);
    for (const std::uint64_t k : {0, 1, 2}) {
        EnsembleSpec tspec{config.flow, config.step, traj_grid, {0.0, 0.0}, 1,
                           config.seed, 1000 + 3 * k, workers, false};
        const auto traj = run_ensemble(tspec);
        TableWriter table("t,x1,x2,h");
        table.row(0.0, 0.0, 0.0, 0.0);
        for (std::size_t i = 0; i < traj_grid.times.size(); ++i) {
            const auto p = traj[0].at_grid[i];
            table.row(traj_grid.times[i], p.x1, p.x2, flow::hamiltonian(p));
        }
        table.finish(dir, "trajectory_" + std::to_string(k) + ".csv", hash, manifest);
    }

    // (c) Particle-cloud snapshots.
    const stats::TimeGrid snap_grid{{0.004, 0.012, 0.040}};
    EnsembleSpec sspec{config.flow, config.step, snap_grid, {0.0, 0.0}, config.paths,
                       config.seed, 0,           workers,   false};
    const auto snaps = run_ensemble(sspec);
    const double delta = config.flow.delta();
    for (std::size_t k = 0; k < snap_grid.times.size(); ++k) {
        char name[48];
        std::snprintf(name, sizeof(name), "snapshot_t%.3f.csv", snap_grid.times[k]);
        TableWriter table("path_index,x1,x2,h,in_layer");
        for (const auto& rec : snaps) {
            const auto p = rec.at_grid[k];
            const double h = flow::hamiltonian(p);
            table.row(rec.path_index, p.x1, p.x2, h, std::abs(h) < delta ? 1 : 0);
        }
        table.finish(dir, name, hash, manifest);
    }

    manifest.finished = iso_now();
    manifest.write((fs::path(dir) / "manifest.json").string());
    return manifest;
}

std::vector<std::vector<std::string>> load_table(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ConfigError("load_table: cannot open " + csv_path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string body = buf.str();

    std::ifstream side(csv_path + ".meta.json");
    if (!side)
        throw ConfigError("load_table: orphan output (missing sidecar): " + csv_path);
    json meta;
    try {
        side >> meta;
    } catch (const json::exception& e) {
        throw ConfigError("load_table: bad sidecar for " + csv_path + ": " + e.what());
    }
    if (meta.value("checksum", "") != fnv1a_hex(body))
        throw ConfigError("load_table: orphan output (checksum mismatch): " + csv_path);

    std::vector<std::vector<std::string>> rows;
    std::istringstream lines(body);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream cell_in(line);
        std::string cell;
        while (std::getline(cell_in, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace cellflow::harness
