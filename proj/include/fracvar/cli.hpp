#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "fracvar/config.hpp"
#include "fracvar/experiments.hpp"
#include "fracvar/io.hpp"
#include "fracvar/manifest.hpp"
#include "fracvar/solvers.hpp"
#include "fracvar/spectral.hpp"

namespace fracvar {

enum ExitCode : int { exit_ok = 0, exit_solver_failure = 1, exit_config_error = 2 };

inline bool is_command(const std::string& c) {
    return c == "verify" || c == "eig" || c == "solve" || c == "mpass" || c == "sweep" || c == "appendix";
}

/// --threads, else FRACVAR_THREADS, else 1.
inline int resolve_threads(std::optional<int> flag) {
    if (flag) {
        if (*flag < 1) throw ConfigError("--threads", "must be positive");
        return *flag;
    }
    if (const char* env = std::getenv("FRACVAR_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1 || v > 4096) throw ConfigError("FRACVAR_THREADS", "must be a positive integer");
        return static_cast<int>(v);
    }
    return 1;
}

namespace detail {

inline void emit_field(RunManifest& m, const RunConfig& cfg, const std::string& stem, const Field& u) {
    if (cfg.output.fields != FieldFormat::csv) {
        write_field(m.path(stem + ".fvfd"), u);
        m.add(stem + ".fvfd");
    }
    if (cfg.output.fields != FieldFormat::binary) {
        write_field_csv(m.path(stem + ".csv"), u);
        m.add(stem + ".csv");
    }
}

inline void emit_json(RunManifest& m, const std::string& name, const json& j) {
    write_json(m.path(name), j);
    m.add(name);
}

inline void emit_text(RunManifest& m, const std::string& name, const std::string& text) {
    write_text(m.path(name), text);
    m.add(name);
}

inline bool regime_failed(const RegimeReport& r) {
    for (const auto& e : r.entries) {
        if (e.first.classification == Classification::failed) return true;
        if (e.second && !e.second->converged) return true;
    }
    return false;
}

inline int cmd_verify(const RunConfig& cfg, RunManifest& m, int threads, std::ostream& log) {
    const auto rep = m.stage("verify", [&] { return verify_identities(verify_config(cfg, threads)); });
    emit_json(m, "report.json", to_json(rep));
    emit_text(m, "identities.csv", verification_csv(rep));
    for (const auto& c : rep.checks) log << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << format_double(c.value) << '\n';
    return rep.all_passed() ? exit_ok : exit_solver_failure;
}

inline int cmd_eig(const RunConfig& cfg, RunManifest& m, std::ostream& log) {
    const GridPtr grid = build_grid(cfg.domain);
    const auto lap = m.stage("assemble", [&] { return assemble_laplacian(grid, cfg.s, cfg.quadrature); });
    const auto eig = m.stage("eigensolve", [&] { return first_eigenpair(lap); });
    write_eigenpair_csv(m.path("eigenpair.csv"), eig);
    m.add("eigenpair.csv");
    if (cfg.output.fields != FieldFormat::csv) {
        write_field(m.path("phi1.fvfd"), eig.phi);
        m.add("phi1.fvfd");
    }
    emit_json(m, "report.json", {{"lambda1", eig.lambda}, {"residual", eig.residual}, {"iterations", eig.iterations}});
    log << "lambda1 = " << format_double(eig.lambda) << '\n';
    return exit_ok;
}

/// Operators and eigenpair, then the reaction resolved against lambda1.
inline std::pair<RegimeConfig, Problem> setup(const RunConfig& cfg, RunManifest& m, int threads) {
    RegimeConfig rc = regime_config(cfg, threads);
    Problem p = m.stage("setup", [&] { return build_problem(rc); });
    resolve_reaction(rc, cfg, p.eig.lambda);
    return {std::move(rc), std::move(p)};
}

inline int cmd_solve(const RunConfig& cfg, RunManifest& m, std::ostream& log) {
    const auto [rc, p] = setup(cfg, m, 1);
    const ReactionModel reaction = make_reaction(rc.reaction.family, rc.reaction.params);
    RegimeEntry e;
    if (reaction.is_sublinear()) {
        e = m.stage("solve", [&] { return detail::sublinear_run(p, rc, reaction, reaction.nu); });
    } else {
        e.sweep_value = cfg.forcing_delta;
        e.audit = check_hypotheses(p.coeff, reaction, p.eig.lambda, p.grid->dimension(), cfg.s);
        e.audit_ok = audit_passes(e.audit, {"gamma1", "gamma2", "f1", "f3", "f4"});
        const Field h = forcing_field(p, rc.forcing);
        const EnergyModel model = make_energy_model(p.grad, p.coeff, reaction, h);
        e.ball_radius = cfg.solver.ball_radius;
        e.first = m.stage("solve", [&] { return minimize_cone(model, cfg.solver, initial_guess(p, h)); });
        e.energy_negative = e.first.energy < 0.0;
    }
    json j = to_json(e);
    j["first"] = to_json(e.first, true);
    j["lambda1"] = p.eig.lambda;
    emit_json(m, "report.json", j);
    emit_field(m, cfg, "solution", e.first.solution);
    log << "classification = " << to_string(e.first.classification) << ", energy = " << format_double(e.first.energy)
        << ", kkt = " << format_double(e.first.kkt) << '\n';
    return e.first.classification == Classification::failed ? exit_solver_failure : exit_ok;
}

inline int write_regime(const RunConfig& cfg, RunManifest& m, const RegimeReport& rep, std::ostream& log) {
    emit_json(m, "report.json", to_json(rep));
    emit_text(m, "summary.csv", regime_csv(rep));
    for (std::size_t k = 0; k < rep.entries.size(); ++k) {
        const auto& e = rep.entries[k];
        const std::string idx = std::to_string(k);
        emit_field(m, cfg, "u1_" + idx, e.first.solution);
        if (e.second) emit_field(m, cfg, "u2_" + idx, e.second->solution);
        log << "[" << k << "] value = " << format_double(e.sweep_value) << ": " << to_string(e.first.classification) << " (J = "
            << format_double(e.first.energy) << ")";
        if (e.second) log << ", second " << to_string(e.second->classification) << " (J = " << format_double(e.second->energy) << ")";
        if (!e.note.empty()) log << " - " << e.note;
        log << '\n';
    }
    if (rep.threshold) log << "nu* = " << format_double(rep.threshold->nu_star) << '\n';
    return regime_failed(rep) ? exit_solver_failure : exit_ok;
}

inline int cmd_mpass(const RunConfig& cfg, RunManifest& m, int threads, std::ostream& log) {
    const auto [rc, p] = setup(cfg, m, threads);
    const auto rep = m.stage("pipeline", [&] { return run_linear_regime(rc, p); });
    return write_regime(cfg, m, rep, log);
}

inline int cmd_sweep(const RunConfig& cfg, RunManifest& m, int threads, std::ostream& log) {
    const auto [rc, p] = setup(cfg, m, threads);
    if (cfg.sweep.regime == "linear") {
        const auto rep = m.stage("pipeline", [&] { return run_linear_regime(rc, p); });
        return write_regime(cfg, m, rep, log);
    }
    if (cfg.sweep.values.empty() && !cfg.sweep.threshold) throw ConfigError("sweep.values", "needs values or threshold=true");
    RegimeReport rep;
    rep.lambda1 = p.eig.lambda;
    if (!cfg.sweep.values.empty()) rep = m.stage("sweep", [&] { return run_sublinear_regime(rc, p); });
    if (cfg.sweep.threshold) rep.threshold = m.stage("threshold", [&] { return find_nu_threshold(rc, p); });
    return write_regime(cfg, m, rep, log);
}

inline int cmd_appendix(const RunConfig& cfg, RunManifest& m, std::ostream& log) {
    const auto rep = m.stage("appendix", [&] { return appendix_convergence(appendix_config(cfg)); });
    emit_json(m, "report.json", to_json(rep));
    emit_text(m, "appendix.csv", appendix_csv(rep));
    log << "final relative error = " << format_double(rep.error.back()) << '\n';
    return exit_ok;
}

}  // namespace detail

/// Runs one command into `out_dir`, always leaving a manifest behind. Returns the exit code.
inline int run_command(const RunConfig& cfg, const std::string& command, const std::string& out_dir, int threads,
                       std::ostream& log) {
    if (!is_command(command)) throw ConfigError("command", "unknown command '" + command + "'");
    std::filesystem::create_directories(out_dir);
    RunManifest m(out_dir);
    const json snapshot = to_json(cfg);
    detail::emit_json(m, "config.json", snapshot);
    int code = exit_ok;
    try {
        if (command == "verify") code = detail::cmd_verify(cfg, m, threads, log);
        if (command == "eig") code = detail::cmd_eig(cfg, m, log);
        if (command == "solve") code = detail::cmd_solve(cfg, m, log);
        if (command == "mpass") code = detail::cmd_mpass(cfg, m, threads, log);
        if (command == "sweep") code = detail::cmd_sweep(cfg, m, threads, log);
        if (command == "appendix") code = detail::cmd_appendix(cfg, m, log);
    } catch (const ConfigError& e) {
        m.write(command, snapshot, "config-error", e.what());
        throw;
    } catch (const std::exception& e) {
        m.write(command, snapshot, "error", e.what());
        log << "error: " << e.what() << '\n';
        return exit_solver_failure;
    }
    m.write(command, snapshot, code == exit_ok ? "ok" : "solver-failure");
    return code;
}

/// Parses the config, resolves the output directory and threads, and runs the command.
/// Config problems are reported on `err` with exit code 2.
inline int run_cli(const std::string& command, const std::string& config_path, const std::optional<std::string>& out,
                   std::optional<int> threads, std::ostream& log, std::ostream& err) {
    try {
        if (!is_command(command)) throw ConfigError("command", "unknown command '" + command + "'");
        const RunConfig cfg = parse_config(config_path);
        const int k = resolve_threads(threads);
        return run_command(cfg, command, out.value_or(cfg.output.directory), k, log);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_config_error;
    }
}

}  // namespace fracvar
