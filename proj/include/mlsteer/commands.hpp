#pragma once

// One function per CLI command. Each takes a validated RunConfig and returns a RunReport
// holding JSON results plus the tables to be written.

#include "config.hpp"
#include "control.hpp"
#include "delayed_ml.hpp"
#include "detsolver.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "sde_sim.hpp"
#include "specfun.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mlsteer {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,  // I/O and anything unclassified
    kExitConfig = 2,
    kExitDomain = 3,
    kExitConvergence = 4,
    kExitSingular = 5,
};

struct RunOptions {
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed;  // overrides monte_carlo.seed
    std::optional<int> threads;
    std::string format = "csv";
};

namespace detail {

class PhaseTimer {
public:
    explicit PhaseTimer(RunReport& r) : report_(r), start_(std::chrono::steady_clock::now()) {}
    void mark(const std::string& phase) {
        const auto now = std::chrono::steady_clock::now();
        report_.timing.emplace_back(phase, std::chrono::duration<double>(now - start_).count());
        start_ = now;
    }

private:
    RunReport& report_;
    std::chrono::steady_clock::time_point start_;
};

inline json vec_json(const Vector& v) { return to_json(v); }
inline json mat_json(const Matrix& M) { return to_json(M); }

inline json contraction_json(const ContractionReport& c) {
    return {{"gamma_weight", c.gamma_weight}, {"lambda_T", finite_or_string(c.lambda_T)}, {"M_k", c.M_k},
            {"ratio", finite_or_string(c.ratio)}, {"contraction_ok", c.contraction_ok},
            {"gamma_search_failed", c.gamma_search_failed}};
}

inline Table summary_table(const std::string& name, const PathEnsemble& e) {
    Table t;
    t.name = name;
    t.columns = {"t"};
    for (auto& c : numbered("mean", e.state_dim)) t.columns.push_back(c);
    for (auto& c : numbered("var", e.state_dim)) t.columns.push_back(c);
    const auto s = summarize(e);
    for (std::size_t k = 0; k < s.times.size(); ++k) {
        std::vector<double> row{s.times[k]};
        append(row, s.mean[k]);
        append(row, s.variance[k]);
        t.add(std::move(row));
    }
    return t;
}

inline Table path_table(const std::string& name, const PathEnsemble& e) {
    Table t;
    t.name = name;
    t.columns = {"t", "path"};
    for (auto& c : numbered("x", e.state_dim)) t.columns.push_back(c);
    for (int p = 0; p < e.n_paths; ++p)
        for (int k = 0; k <= e.grid.steps; ++k) {
            std::vector<double> row{e.grid.t(k), static_cast<double>(p)};
            append(row, e.state(p, k));
            t.add(std::move(row));
        }
    return t;
}

inline void diagnose_coercivity(RunReport& r, double min_eig, double threshold) {
    if (min_eig > threshold && min_eig < 1e3 * threshold)
        r.diagnostics.push_back("coercivity marginal: min_eig " + format_number(min_eig) + " is within 1e3 of the threshold " +
                                format_number(threshold));
}

}  // namespace detail

inline RunReport run_eval_ml(const RunConfig& cfg) {
    RunReport r;
    r.command = "eval-ml";
    const auto& e = *cfg.eval_ml;
    json scalar = json::array();
    for (double z : e.z) {
        const auto v = ml3_scalar_eval(e.query, z);
        scalar.push_back({{"z", z}, {"value", v.value}, {"terms_used", v.terms_used}, {"tail_bound", v.tail_bound}});
    }
    r.results["query"] = {{"alpha", e.query.alpha}, {"beta", e.query.beta}, {"delta", e.query.delta},
                          {"tolerance", e.query.tolerance}, {"max_terms", e.query.max_terms}};
    r.results["scalar"] = scalar;
    if (e.matrix) {
        const auto v = ml3_matrix(e.query, *e.matrix);
        r.results["matrix"] = {{"argument", to_json(*e.matrix)}, {"value", to_json(v.value)}, {"terms_used", v.terms_used},
                               {"tail_bound", v.tail_bound}};
    }
    if (!e.times.empty()) {
        const SystemSpec spec = cfg.system_spec();
        spec.validate();
        const double beta = e.perturbed_beta.value_or(spec.alpha);
        const DelayedML ml(spec);
        const Eigen::Index n = spec.dim();
        Table t;
        t.name = "delayed_ml";
        t.columns = {"t", "segment"};
        for (auto& c : matrix_columns("X", n, n)) t.columns.push_back(c);
        for (auto& c : matrix_columns("P", n, n)) t.columns.push_back(c);
        bool singular = false;
        for (double s : e.times) {
            const auto X = ml.fundamental_eval(s);
            const auto P = ml.perturbed_eval(beta, s);
            singular = singular || P.near_singular;
            std::vector<double> row{s, static_cast<double>(X.segment_index)};
            append(row, X.value);
            append(row, P.value);
            t.add(std::move(row));
        }
        if (singular)
            r.diagnostics.push_back("perturbed function evaluated within 1e-6 h of its integrable singularity at t = -h");
        r.results["perturbed_beta"] = beta;
        r.tables.push_back(std::move(t));
    }
    return r;
}

inline RunReport run_solve(const RunConfig& cfg) {
    RunReport r;
    r.command = "solve";
    detail::PhaseTimer timer(r);
    const SystemSpec spec = cfg.system_spec();
    const Eigen::Index n = spec.dim();
    const bool forced = cfg.solve && cfg.solve->forcing;
    const Vector fv = forced ? *cfg.solve->forcing : Vector::Zero(n);
    const Forcing f = [fv](double) { return fv; };
    const Trajectory tr = forced ? solve_forced(spec, f, cfg.mesh) : solve_homogeneous(spec, cfg.mesh);
    timer.mark("solve");
    Table t;
    t.name = "trajectory";
    t.columns = {"t"};
    for (auto& c : numbered("x", n)) t.columns.push_back(c);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
        std::vector<double> row{tr.times[k]};
        append(row, tr.states[k]);
        t.add(std::move(row));
    }
    r.tables.push_back(std::move(t));
    r.results = {{"method", tr.method}, {"step", tr.step}, {"history_nodes", tr.history_nodes},
                 {"x_T", to_json(tr.states.back())}, {"forced", forced}};
    if (cfg.solve && cfg.solve->oracle) {
        const Trajectory ref = pece_oracle(spec, f, cfg.mesh);
        timer.mark("oracle");
        double scale = 0.0, gap = 0.0;
        for (std::size_t k = 0; k < tr.states.size(); ++k) scale = std::max(scale, tr.states[k].lpNorm<Eigen::Infinity>());
        for (std::size_t k = 0; k < tr.states.size(); ++k) gap = std::max(gap, (tr.states[k] - ref.states[k]).lpNorm<Eigen::Infinity>());
        r.results["oracle"] = {{"method", ref.method}, {"sup_relative_error", scale > 0.0 ? gap / scale : gap}};
    }
    return r;
}

inline RunReport run_simulate(const RunConfig& cfg) {
    RunReport r;
    r.command = "simulate";
    detail::PhaseTimer timer(r);
    const SystemSpec spec = cfg.system_spec();
    spec.require_stochastic_order();
    const DiffusionSpec diff = cfg.diffusion_spec(spec.dim());
    const auto& mc = cfg.monte_carlo;
    const auto ens = sample_brownian(spec, cfg.mesh, mc.n_paths, static_cast<int>(diff.noise_dim), mc.seed);
    timer.mark("sample");
    const std::string scheme = cfg.simulate ? cfg.simulate->scheme : "mild";
    const PathEnsemble x = scheme == "mild" ? simulate_mild(spec, diff, ens) : simulate_integral_form(spec, diff, ens);
    timer.mark("simulate");
    r.tables.push_back(detail::summary_table("summary", x));
    if (mc.per_path) r.tables.push_back(detail::path_table("paths", x));
    const auto c = contraction_report(spec, diff);
    if (!c.contraction_ok) r.diagnostics.push_back("mild map is not a contraction in any tested weighted norm");
    if (c.gamma_search_failed) r.diagnostics.push_back("weight search for the contraction norm hit its cap");
    r.results = {{"scheme", x.scheme}, {"n_paths", mc.n_paths}, {"seed", mc.seed}, {"step", x.grid.dt},
                 {"steps", x.grid.steps}, {"diffusion", diff.name}, {"contraction", detail::contraction_json(c)}};
    return r;
}

inline RunReport run_isometry(const RunConfig& cfg) {
    RunReport r;
    r.command = "isometry";
    detail::PhaseTimer timer(r);
    const SystemSpec spec = cfg.system_spec();
    spec.require_stochastic_order();
    const DiffusionSpec diff = cfg.diffusion_spec(spec.dim());
    const auto& mc = cfg.monte_carlo;
    const auto ens = sample_brownian(spec, cfg.mesh, mc.n_paths, static_cast<int>(diff.noise_dim), mc.seed);
    const auto moments = convolution_second_moments(spec, diff, ens);
    timer.mark("monte_carlo");
    Table t;
    t.name = "isometry";
    t.columns = {"t", "quadrature", "monte_carlo", "standard_error", "z_score"};
    double worst = 0.0;
    for (double s : cfg.isometry->times) {
        const double kf = s / ens.grid.dt;
        const long k = std::lround(kf);
        if (std::abs(kf - static_cast<double>(k)) > 1e-8 * std::max(1.0, kf))
            throw DomainError("isometry time " + format_number(s) + " is not a grid node of step " + format_number(ens.grid.dt));
        const double q = second_moment_isometry(spec, diff, s, cfg.mesh);
        const auto& m = moments[static_cast<std::size_t>(k)];
        const double z = m.standard_error > 0.0 ? (m.mean - q) / m.standard_error : 0.0;
        worst = std::max(worst, std::abs(z));
        t.add({s, q, m.mean, m.standard_error, z});
    }
    timer.mark("quadrature");
    r.tables.push_back(std::move(t));
    r.results = {{"n_paths", mc.n_paths}, {"seed", mc.seed}, {"step", ens.grid.dt}, {"max_abs_z", worst}};
    return r;
}

inline RunReport run_grammian(const RunConfig& cfg) {
    RunReport r;
    r.command = "grammian";
    detail::PhaseTimer timer(r);
    const SystemSpec spec = cfg.system_spec();
    const auto rep = analyze_controllability(spec, cfg.mesh);
    timer.mark("grammian");
    r.results = {{"grammian", to_json(rep.grammian)},
                 {"min_eig", rep.min_eig},
                 {"max_eig", rep.max_eig},
                 {"eig_threshold", rep.eig_threshold},
                 {"coercivity_gamma", rep.coercivity_gamma},
                 {"grammian_positive", rep.grammian_positive},
                 {"rank", rep.h_matrix_rank},
                 {"h_matrix_columns", rep.h_matrix_cols},
                 {"rank_full", rep.rank_full},
                 {"controllable", rep.controllable},
                 {"tests_agree", rep.tests_agree},
                 {"char_poly", rep.char_poly},
                 {"cayley_hamilton_residual", rep.cayley_hamilton_residual}};
    if (!rep.tests_agree) r.diagnostics.push_back("Grammian positivity and the rank test disagree");
    detail::diagnose_coercivity(r, rep.min_eig, rep.eig_threshold);
    return r;
}

inline RunReport run_rank(const RunConfig& cfg) {
    RunReport r;
    r.command = "rank";
    const SystemSpec spec = cfg.system_spec();
    const auto k = kalman_rank(spec);
    const auto cp = char_poly(spec.A);
    r.results = {{"rank", k.rank},
                 {"n", spec.dim()},
                 {"controllable", k.rank == spec.dim()},
                 {"h_matrix", to_json(k.H)},
                 {"char_poly", cp},
                 {"cayley_hamilton_residual", cayley_hamilton_residual(spec.A, cp)}};
    return r;
}

inline RunReport run_steer(const RunConfig& cfg) {
    RunReport r;
    r.command = "steer";
    detail::PhaseTimer timer(r);
    const SteeringProblem prob = cfg.steering_problem();
    prob.validate();
    const auto& mc = cfg.monte_carlo;
    const auto ens = sample_brownian(prob.spec, prob.mesh, mc.n_paths, static_cast<int>(prob.diff.noise_dim), mc.seed);
    timer.mark("sample");
    const auto hc = hypothesis_constants(prob);
    timer.mark("constants");
    const SteeringResult res = prob.mode == SteeringProblem::Mode::linear ? synthesize_linear_control(prob, ens)
                                                                          : steer_nonlinear(prob, ens);
    timer.mark("steer");

    const auto& law = res.law;
    const int m = law.control_dim;
    Table u;
    u.name = "control";
    u.columns = {"t"};
    for (auto& c : numbered("u", m)) u.columns.push_back(c);
    std::vector<double> buf(static_cast<std::size_t>(law.n_paths));
    for (std::size_t k = 0; k < law.times.size(); ++k) {
        std::vector<double> row{law.times[k]};
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < law.n_paths; ++p) buf[static_cast<std::size_t>(p)] = law.value(p, static_cast<int>(k))(i);
            row.push_back(pairwise_sum(buf) / law.n_paths);
        }
        u.add(std::move(row));
    }
    r.tables.push_back(std::move(u));
    r.tables.push_back(detail::summary_table("steered_summary", res.steered));
    if (mc.per_path) {
        Table up;
        up.name = "control_paths";
        up.columns = {"t", "path"};
        for (auto& c : numbered("u", m)) up.columns.push_back(c);
        for (int p = 0; p < law.n_paths; ++p)
            for (std::size_t k = 0; k < law.times.size(); ++k) {
                std::vector<double> row{law.times[k], static_cast<double>(p)};
                append(row, law.value(p, static_cast<int>(k)));
                up.add(std::move(row));
            }
        r.tables.push_back(std::move(up));
        r.tables.push_back(detail::path_table("steered_paths", res.steered));
    }

    const double mean_energy = pairwise_sum(law.energy) / law.n_paths;
    r.results = {{"mode", res.mode},
                 {"n_paths", mc.n_paths},
                 {"seed", mc.seed},
                 {"step", ens.grid.dt},
                 {"target", to_json(prob.target)},
                 {"iterations", res.iterations},
                 {"converged", res.converged},
                 {"contractive", res.contractive},
                 {"terminal_mean_sq_error", res.terminal_mean_sq_error},
                 {"terminal_mean_sq_se", res.terminal_mean_sq_se},
                 {"terminal_bias", res.terminal_bias},
                 {"mean_control_energy", mean_energy},
                 {"picard_gaps", res.picard_gaps},
                 {"picard_ratios", res.picard_ratios},
                 {"hypotheses",
                  {{"M", hc.M}, {"N", hc.N}, {"K", hc.K}, {"K_floored", hc.K_floored}, {"k1", hc.k1},
                   {"LT_star_bound", hc.LT_star_bound}, {"lambda", hc.lambda}, {"rho", hc.rho}, {"C1", hc.C1},
                   {"C2", hc.C2}, {"h3_holds", hc.h3_holds}, {"h4_holds", hc.h4_holds}}}};
    r.diagnostics = res.diagnostics;
    if (hc.K_floored) r.diagnostics.push_back("K floor applied: ||phi(-h)|| < 1e-12");
    if (!hc.h3_holds) r.diagnostics.push_back("hypothesis lambda < 1 fails (lambda = " + format_number(hc.lambda) + ")");
    if (!hc.h4_holds) r.diagnostics.push_back("hypothesis rho < 1 fails (rho = " + format_number(hc.rho) + ")");
    for (std::size_t i = 0; i < res.picard_ratios.size(); ++i)
        if (res.picard_ratios[i] > hc.rho + 0.1 && i >= 1)
            r.diagnostics.push_back("Picard ratio " + format_number(res.picard_ratios[i]) + " at iteration " +
                                    std::to_string(i + 2) + " exceeds rho + 0.1");
    const Matrix G = grammian_matrix(prob.spec, prob.mesh);
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    detail::diagnose_coercivity(r, es.eigenvalues().minCoeff(), grammian_threshold(G));
    return r;
}

inline RunReport run_verify_lemma(const RunConfig& cfg) {
    RunReport r;
    r.command = "verify-lemma";
    detail::PhaseTimer timer(r);
    const auto& l = *cfg.lemma;
    Table t;
    t.name = "lemma";
    t.columns = {"t", "gamma", "alpha", "lhs", "rhs", "gap_error"};
    json combos = json::array();
    double worst = -std::numeric_limits<double>::infinity(), worst_gap = 0.0;
    for (double g : l.gammas)
        for (double a : l.alphas) {
            const auto rep = verify_ml_inequality(g, a, l.times);
            for (const auto& row : rep.rows) t.add({row.t, g, a, row.lhs, row.rhs, row.gap_error});
            combos.push_back({{"gamma", g}, {"alpha", a}, {"max_violation", rep.max_violation}, {"max_gap_error", rep.max_gap_error}});
            worst = std::max(worst, rep.max_violation);
            worst_gap = std::max(worst_gap, rep.max_gap_error);
        }
    timer.mark("verify");
    r.tables.push_back(std::move(t));
    r.results = {{"cases", combos}, {"max_violation", finite_or_string(worst)}, {"max_gap_error", worst_gap}};
    if (worst > 1e-8) r.diagnostics.push_back("inequality violated: max(lhs - rhs) = " + format_number(worst));
    return r;
}

/// Applies option overrides to a parsed configuration.
inline RunConfig apply_options(RunConfig cfg, const RunOptions& opt) {
    if (opt.seed) cfg.monte_carlo.seed = *opt.seed;
    return cfg;
}

/// Runs `command` and writes its outputs. Errors propagate as library exceptions.
inline RunReport run_command(const RunConfig& parsed, const std::string& command, const RunOptions& opt = {}) {
    const RunConfig cfg = apply_options(parsed, opt);
    if (opt.threads) {
        if (*opt.threads < 1) throw ConfigError("--threads must be >= 1");
        set_max_threads(*opt.threads);
    }
    RunReport r;
    if (command == "eval-ml")
        r = run_eval_ml(cfg);
    else if (command == "solve")
        r = run_solve(cfg);
    else if (command == "simulate")
        r = run_simulate(cfg);
    else if (command == "isometry")
        r = run_isometry(cfg);
    else if (command == "grammian")
        r = run_grammian(cfg);
    else if (command == "rank")
        r = run_rank(cfg);
    else if (command == "steer")
        r = run_steer(cfg);
    else if (command == "verify-lemma")
        r = run_verify_lemma(cfg);
    else
        throw ConfigError("unknown command '" + command + "'");
    r.inputs_digest = config_digest(cfg);
    emit_outputs(r, opt.out_dir, opt.format);
    return r;
}

/// Exit status and class name for an exception thrown by run_command or parse_config.
inline std::pair<int, const char*> classify_error(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return {kExitConfig, "config"};
    if (dynamic_cast<const SingularGrammianError*>(&e)) return {kExitSingular, "singular-grammian"};
    if (dynamic_cast<const ConvergenceError*>(&e)) return {kExitConvergence, "convergence"};
    if (dynamic_cast<const DomainError*>(&e)) return {kExitDomain, "math-domain"};
    return {kExitFailure, "failure"};
}

/// One-line JSON diagnostic for stderr.
inline std::string error_diagnostic(const std::exception& e) {
    const auto [code, cls] = classify_error(e);
    json j{{"error", cls}, {"exit_code", code}, {"message", e.what()}};
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e); ce && !ce->issues().empty()) j["issues"] = ce->issues();
    if (const auto* pe = dynamic_cast<const PermutabilityError*>(&e)) j["commutator_norm"] = pe->commutator_norm();
    return j.dump();
}

}  // namespace mlsteer
