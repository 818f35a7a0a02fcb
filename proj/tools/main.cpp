// Command-line entry point: run configured experiments, the analytic
// self-test, the figure bundle, single PDE solves, and super-solution audits.
// Outputs land under --out, the CELLFLOW_OUT root, or ./out.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cellflow/harness.hpp"

namespace {

enum ExitCode : int {
    exit_ok = 0,
    exit_config = 2,
    exit_solver = 3,
    exit_probe_timeout = 4,
    exit_internal = 5,
};

void print_error_record(const char* code, const std::string& message) {
    nlohmann::json j;
    j["error"] = code;
    j["message"] = message;
    std::fprintf(stderr, "%s\n", j.dump().c_str());
}

} // namespace

int main(int argc, char** argv) {
    using namespace cellflow;

    CLI::App app{"cellflow: diffusion in fast cellular flows"};
    app.require_subcommand(1);

    std::string config_path;
    auto* cmd_run = app.add_subcommand("run", "run an experiment from a config file");
    cmd_run->add_option("config", config_path, "config file")->required();

    std::string out_dir;
    int workers = 0;
    auto* cmd_selftest = app.add_subcommand("selftest", "analytic closed-form self-tests");
    cmd_selftest->add_option("--out", out_dir, "output directory");

    auto* cmd_figures = app.add_subcommand("figures", "reproduce the figure bundle");
    cmd_figures->add_option("--out", out_dir, "output directory");
    cmd_figures->add_option("--workers", workers, "worker threads (0 = hardware)");

    double pde_A = 1000.0, pde_lambda = 64.0, pde_N = 1.0;
    int pde_n = 0;
    std::string pde_problem = "chi";
    auto* cmd_pde = app.add_subcommand("pde", "single cell-problem solve");
    cmd_pde->add_option("--A", pde_A, "Peclet number")->required();
    cmd_pde->add_option("--problem", pde_problem, "chi | exit | resolvent");
    cmd_pde->add_option("--lambda", pde_lambda, "resolvent frequency");
    cmd_pde->add_option("--n", pde_n, "grid resolution (0 = policy)");
    cmd_pde->add_option("--N", pde_N, "layer constant");
    cmd_pde->add_option("--out", out_dir, "output directory");

    double audit_A = 1000.0;
    auto* cmd_audit = app.add_subcommand("audit-supersolutions", "super-solution residual audit");
    cmd_audit->add_option("--A", audit_A, "Peclet number")->required();
    cmd_audit->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            const auto config = harness::load_config(config_path);
            const auto manifest = harness::run(config);
            std::printf("ok: %zu outputs, config %s\n", manifest.output_checksums.size(),
                        manifest.config_hash.c_str());
            return exit_ok;
        }
        if (cmd_selftest->parsed()) {
            harness::ExperimentConfig config;
            config.kind = harness::ExperimentKind::BoundsSelftest;
            config.out_dir = out_dir;
            harness::run(config);
            int failures = 0;
            for (const auto& row : harness::bounds_selftest()) {
                std::printf("%-42s %-5s value=%.3g threshold=%.3g\n", row.check.c_str(),
                            row.pass ? "PASS" : "FAIL", row.value, row.threshold);
                if (!row.pass) ++failures;
            }
            return failures == 0 ? exit_ok : exit_internal;
        }
        if (cmd_figures->parsed()) {
            const auto manifest = harness::reproduce_figures(out_dir, workers);
            std::printf("ok: %zu outputs, config %s\n", manifest.output_checksums.size(),
                        manifest.config_hash.c_str());
            return exit_ok;
        }
        if (cmd_pde->parsed()) {
            harness::ExperimentConfig config;
            config.kind = harness::ExperimentKind::CellPde;
            config.flow.A = pde_A;
            config.flow.N = pde_N;
            config.pde_problem = pde_problem;
            config.pde_lambda = pde_lambda;
            config.pde_n = pde_n;
            config.out_dir = out_dir;
            harness::run(config);
            return exit_ok;
        }
        if (cmd_audit->parsed()) {
            harness::ExperimentConfig config;
            config.kind = harness::ExperimentKind::SupersolutionAudit;
            config.flow.A = audit_A;
            config.out_dir = out_dir;
            harness::run(config);
            return exit_ok;
        }
    } catch (const harness::ConfigError& e) {
        print_error_record("config", e.what());
        return exit_config;
    } catch (const pde::SolverError& e) {
        print_error_record("solver_nonconvergence", e.what());
        return exit_solver;
    } catch (const crossing::ProbeTimeout& e) {
        print_error_record("probe_timeout", e.what());
        return exit_probe_timeout;
    } catch (const std::exception& e) {
        print_error_record("internal", e.what());
        return exit_internal;
    }
    return exit_internal;
}
