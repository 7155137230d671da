#pragma once

// Strict-schema JSON run configuration.
//
// Matrices are row-major nested arrays. Unknown keys are rejected, and every violation found
// in one file is reported together in a single ConfigError.

#include "control.hpp"
#include "errors.hpp"
#include "initial_function.hpp"
#include "linalg.hpp"
#include "mesh.hpp"
#include "sde_sim.hpp"
#include "specfun.hpp"
#include "system.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mlsteer {

using json = nlohmann::json;

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"eval-ml", "solve",  "simulate", "isometry",
                                                "grammian", "rank", "steer",    "verify-lemma"};
    return names;
}

struct PhiConfig {
    std::string kind = "constant";  // constant | polynomial | spline
    Vector value;                    // constant
    std::vector<Vector> coefficients;
    std::vector<double> knots;
    std::vector<Vector> values;
};

struct SystemConfig {
    Matrix A, B, C;
    double h = 1.0;
    double alpha = 0.75;
    double T = 1.0;
    PhiConfig phi;
};

struct DiffusionConfig {
    std::string kind = "zero";  // zero | constant | linear_state | sin_state | custom_table
    double sigma = 0.0;         // constant: sigma I unless `matrix` is given
    std::optional<Matrix> matrix;
    double scale = 0.0;  // linear_state, sin_state
    std::vector<double> times;
    std::vector<Matrix> values;
};

struct MonteCarloConfig {
    int n_paths = 1000;
    std::uint64_t seed = 1;
    bool per_path = false;
};

struct EvalMLConfig {
    MLQuery query;
    std::vector<double> z;
    std::optional<Matrix> matrix;
    std::vector<double> times;          // delayed functions of the system, if present
    std::optional<double> perturbed_beta;  // defaults to alpha
};

struct SolveConfig {
    std::optional<Vector> forcing;  // constant forcing f(t) = value
    bool oracle = false;            // also run the predictor-corrector reference
};

struct SimulateConfig {
    std::string scheme = "mild";  // mild | integral
};

struct IsometryConfig {
    std::vector<double> times;
};

struct SteerConfig {
    SteeringProblem::Mode mode = SteeringProblem::Mode::linear;
    Vector target;
    int max_iterations = 50;
    double picard_tolerance = 1e-14;
};

struct LemmaConfig {
    std::vector<double> gammas{0.5, 1.0, 2.0};
    std::vector<double> alphas{0.6, 0.75, 0.9};
    std::vector<double> times;
};

struct RunConfig {
    std::optional<SystemConfig> system;
    std::optional<DiffusionConfig> diffusion;
    MeshSpec mesh;
    MonteCarloConfig monte_carlo;
    std::optional<EvalMLConfig> eval_ml;
    std::optional<SolveConfig> solve;
    std::optional<SimulateConfig> simulate;
    std::optional<IsometryConfig> isometry;
    std::optional<SteerConfig> steer;
    std::optional<LemmaConfig> lemma;

    SystemSpec system_spec() const {
        if (!system) throw ConfigError("configuration has no system block");
        const auto& s = *system;
        SystemSpec spec;
        spec.A = s.A;
        spec.B = s.B;
        spec.C = s.C;
        spec.h = s.h;
        spec.alpha = s.alpha;
        spec.T = s.T;
        if (s.phi.kind == "constant")
            spec.phi = InitialFunction::constant(s.phi.value);
        else if (s.phi.kind == "polynomial")
            spec.phi = InitialFunction::polynomial(s.phi.coefficients);
        else
            spec.phi = InitialFunction::spline(s.phi.knots, s.phi.values);
        return spec;
    }

    DiffusionSpec diffusion_spec(Eigen::Index n) const {
        const DiffusionConfig d = diffusion.value_or(DiffusionConfig{});
        if (d.kind == "zero") return DiffusionSpec::zero(n);
        if (d.kind == "constant") {
            if (d.matrix) return DiffusionSpec::constant_matrix(*d.matrix);
            return DiffusionSpec::constant(n, d.sigma);
        }
        if (d.kind == "linear_state") return DiffusionSpec::linear_state(n, d.scale);
        if (d.kind == "sin_state") return DiffusionSpec::sin_state(n, d.scale);
        return DiffusionSpec::custom_table(d.times, d.values);
    }

    SteeringProblem steering_problem() const {
        if (!steer) throw ConfigError("configuration has no steer block");
        SteeringProblem p;
        p.spec = system_spec();
        p.diff = diffusion_spec(p.spec.dim());
        p.mesh = mesh;
        p.target = steer->target;
        p.mode = steer->mode;
        p.max_iterations = steer->max_iterations;
        p.picard_tolerance = steer->picard_tolerance;
        return p;
    }
};

// ---------------------------------------------------------------- reading

namespace detail {

class ConfigReader {
public:
    std::vector<std::string> issues;

    void fail(const std::string& path, const std::string& what) { issues.push_back(path + ": " + what); }

    /// Rejects keys outside `allowed`; returns false if `j` is not an object.
    bool object(const json& j, const std::string& path, const std::set<std::string>& allowed) {
        if (!j.is_object()) {
            fail(path, "expected an object");
            return false;
        }
        for (const auto& [key, value] : j.items())
            if (!allowed.count(key)) fail(path + "/" + key, "unknown key");
        return true;
    }

    std::optional<double> number(const json& j, const std::string& key, const std::string& path, bool required) {
        if (!j.contains(key)) {
            if (required) fail(path + "/" + key, "required number is missing");
            return std::nullopt;
        }
        const auto& v = j.at(key);
        if (!v.is_number()) {
            fail(path + "/" + key, "expected a number");
            return std::nullopt;
        }
        return v.get<double>();
    }

    std::optional<std::int64_t> integer(const json& j, const std::string& key, const std::string& path) {
        if (!j.contains(key)) return std::nullopt;
        const auto& v = j.at(key);
        if (!v.is_number_integer()) {
            fail(path + "/" + key, "expected an integer");
            return std::nullopt;
        }
        return v.get<std::int64_t>();
    }

    std::optional<std::uint64_t> unsigned_integer(const json& j, const std::string& key, const std::string& path) {
        if (!j.contains(key)) return std::nullopt;
        const auto& v = j.at(key);
        if (!v.is_number_unsigned()) {
            fail(path + "/" + key, "expected a nonnegative integer");
            return std::nullopt;
        }
        return v.get<std::uint64_t>();
    }

    std::optional<bool> boolean(const json& j, const std::string& key, const std::string& path) {
        if (!j.contains(key)) return std::nullopt;
        const auto& v = j.at(key);
        if (!v.is_boolean()) {
            fail(path + "/" + key, "expected true or false");
            return std::nullopt;
        }
        return v.get<bool>();
    }

    std::optional<std::string> string(const json& j, const std::string& key, const std::string& path,
                                      const std::vector<std::string>& choices) {
        if (!j.contains(key)) return std::nullopt;
        const auto& v = j.at(key);
        if (!v.is_string()) {
            fail(path + "/" + key, "expected a string");
            return std::nullopt;
        }
        const auto s = v.get<std::string>();
        if (std::find(choices.begin(), choices.end(), s) == choices.end()) {
            std::string all;
            for (const auto& c : choices) all += (all.empty() ? "" : ", ") + c;
            fail(path + "/" + key, "'" + s + "' is not one of {" + all + "}");
            return std::nullopt;
        }
        return s;
    }

    std::optional<std::vector<double>> numbers(const json& v, const std::string& path) {
        if (!v.is_array()) {
            fail(path, "expected an array of numbers");
            return std::nullopt;
        }
        std::vector<double> out;
        bool ok = true;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) {
                fail(path + "/" + std::to_string(i), "expected a number");
                ok = false;
            } else {
                out.push_back(v[i].get<double>());
            }
        }
        if (!ok) return std::nullopt;
        return out;
    }

    std::optional<Vector> vector(const json& v, const std::string& path) {
        auto xs = numbers(v, path);
        if (!xs) return std::nullopt;
        if (xs->empty()) {
            fail(path, "vector must be nonempty");
            return std::nullopt;
        }
        return Eigen::Map<const Vector>(xs->data(), static_cast<Eigen::Index>(xs->size()));
    }

    std::optional<Matrix> matrix(const json& v, const std::string& path) {
        if (!v.is_array() || v.empty()) {
            fail(path, "expected a nonempty array of rows");
            return std::nullopt;
        }
        std::vector<std::vector<double>> rows;
        bool ok = true;
        for (std::size_t i = 0; i < v.size(); ++i) {
            auto r = numbers(v[i], path + "/" + std::to_string(i));
            if (!r) {
                ok = false;
                continue;
            }
            if (!rows.empty() && r->size() != rows.front().size()) {
                fail(path, "rows have different lengths (matrix must be rectangular)");
                ok = false;
            }
            rows.push_back(std::move(*r));
        }
        if (!ok) return std::nullopt;
        if (rows.front().empty()) {
            fail(path, "matrix rows must be nonempty");
            return std::nullopt;
        }
        Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
        for (Eigen::Index i = 0; i < M.rows(); ++i)
            for (Eigen::Index k = 0; k < M.cols(); ++k) M(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        return M;
    }

    std::vector<Vector> vector_list(const json& v, const std::string& path) {
        std::vector<Vector> out;
        if (!v.is_array() || v.empty()) {
            fail(path, "expected a nonempty array of vectors");
            return out;
        }
        for (std::size_t i = 0; i < v.size(); ++i)
            if (auto x = vector(v[i], path + "/" + std::to_string(i))) out.push_back(*x);
        return out;
    }
};

inline PhiConfig read_phi(ConfigReader& r, const json& j, const std::string& path) {
    PhiConfig phi;
    if (!r.object(j, path, {"kind", "value", "coefficients", "knots", "values"})) return phi;
    phi.kind = r.string(j, "kind", path, {"constant", "polynomial", "spline"}).value_or("constant");
    auto forbid = [&](const char* key) {
        if (j.contains(key)) r.fail(path + "/" + key, std::string("not used by phi kind '") + phi.kind + "'");
    };
    auto need = [&](const char* key) {
        if (!j.contains(key)) r.fail(path + "/" + key, std::string("required for phi kind '") + phi.kind + "'");
        return j.contains(key);
    };
    if (phi.kind == "constant") {
        forbid("coefficients"), forbid("knots"), forbid("values");
        if (need("value"))
            if (auto v = r.vector(j.at("value"), path + "/value")) phi.value = *v;
    } else if (phi.kind == "polynomial") {
        forbid("value"), forbid("knots"), forbid("values");
        if (need("coefficients")) phi.coefficients = r.vector_list(j.at("coefficients"), path + "/coefficients");
    } else {
        forbid("value"), forbid("coefficients");
        if (need("knots"))
            if (auto k = r.numbers(j.at("knots"), path + "/knots")) phi.knots = *k;
        if (need("values")) phi.values = r.vector_list(j.at("values"), path + "/values");
    }
    return phi;
}

inline SystemConfig read_system(ConfigReader& r, const json& j) {
    const std::string path = "/system";
    SystemConfig s;
    if (!r.object(j, path, {"A", "B", "C", "h", "alpha", "T", "phi"})) return s;
    if (!j.contains("A"))
        r.fail(path + "/A", "required matrix is missing");
    else if (auto A = r.matrix(j.at("A"), path + "/A"))
        s.A = *A;
    const Eigen::Index n = s.A.rows();
    if (j.contains("B")) {
        if (auto B = r.matrix(j.at("B"), path + "/B")) s.B = *B;
    } else {
        s.B = Matrix::Zero(n, n);
    }
    if (j.contains("C")) {
        if (auto C = r.matrix(j.at("C"), path + "/C")) s.C = *C;
    } else {
        s.C = Matrix::Identity(n, n);
    }
    s.h = r.number(j, "h", path, true).value_or(s.h);
    s.alpha = r.number(j, "alpha", path, true).value_or(s.alpha);
    s.T = r.number(j, "T", path, true).value_or(s.T);
    if (j.contains("phi")) {
        s.phi = read_phi(r, j.at("phi"), path + "/phi");
    } else {
        s.phi.kind = "constant";
        s.phi.value = Vector::Zero(n);
    }
    return s;
}

inline DiffusionConfig read_diffusion(ConfigReader& r, const json& j) {
    const std::string path = "/diffusion";
    DiffusionConfig d;
    if (!r.object(j, path, {"kind", "sigma", "matrix", "scale", "times", "values"})) return d;
    d.kind = r.string(j, "kind", path, {"zero", "constant", "linear_state", "sin_state", "custom_table"}).value_or("zero");
    const std::map<std::string, std::set<std::string>> uses{{"zero", {}},
                                                            {"constant", {"sigma", "matrix"}},
                                                            {"linear_state", {"scale"}},
                                                            {"sin_state", {"scale"}},
                                                            {"custom_table", {"times", "values"}}};
    for (const char* key : {"sigma", "matrix", "scale", "times", "values"})
        if (j.contains(key) && !uses.at(d.kind).count(key))
            r.fail(path + "/" + key, "not used by diffusion kind '" + d.kind + "'");
    if (d.kind == "constant") {
        if (j.contains("sigma") == j.contains("matrix")) r.fail(path, "constant diffusion needs exactly one of sigma, matrix");
        d.sigma = r.number(j, "sigma", path, false).value_or(0.0);
        if (j.contains("matrix")) d.matrix = r.matrix(j.at("matrix"), path + "/matrix");
    } else if (d.kind == "linear_state" || d.kind == "sin_state") {
        d.scale = r.number(j, "scale", path, true).value_or(0.0);
    } else if (d.kind == "custom_table") {
        if (!j.contains("times") || !j.contains("values")) {
            r.fail(path, "custom_table diffusion needs times and values");
        } else {
            if (auto t = r.numbers(j.at("times"), path + "/times")) d.times = *t;
            const auto& v = j.at("values");
            if (!v.is_array()) {
                r.fail(path + "/values", "expected an array of matrices");
            } else {
                for (std::size_t i = 0; i < v.size(); ++i)
                    if (auto M = r.matrix(v[i], path + "/values/" + std::to_string(i))) d.values.push_back(*M);
            }
            if (d.times.size() != d.values.size()) r.fail(path, "times and values differ in length");
            for (std::size_t i = 1; i < d.times.size(); ++i)
                if (!(d.times[i] > d.times[i - 1])) r.fail(path + "/times", "times must increase strictly");
        }
    }
    return d;
}

inline std::vector<double> read_grid(ConfigReader& r, const json& v, const std::string& path) {
    // Either an explicit list or {"start", "stop", "count"} with count evenly spaced points.
    if (v.is_array()) return r.numbers(v, path).value_or(std::vector<double>{});
    if (!r.object(v, path, {"start", "stop", "count"})) return {};
    const double a = r.number(v, "start", path, true).value_or(0.0);
    const double b = r.number(v, "stop", path, true).value_or(1.0);
    const auto n = r.integer(v, "count", path);
    if (!n || *n < 1) {
        r.fail(path + "/count", "required positive integer");
        return {};
    }
    std::vector<double> out;
    for (std::int64_t i = 0; i < *n; ++i) out.push_back(*n == 1 ? b : a + (b - a) * static_cast<double>(i) / (*n - 1));
    return out;
}

}  // namespace detail

/// Schema pass plus cross-field checks. If `command` is nonempty, blocks required by that
/// command and its order range are checked too.
inline RunConfig config_from_json(const json& root, const std::string& command = "") {
    detail::ConfigReader r;
    RunConfig cfg;
    if (!r.object(root, "", {"system", "diffusion", "mesh", "monte_carlo", "eval_ml", "solve", "simulate", "isometry",
                             "steer", "lemma"}))
        throw ConfigError(r.issues);

    if (root.contains("system")) cfg.system = detail::read_system(r, root.at("system"));
    if (root.contains("diffusion")) cfg.diffusion = detail::read_diffusion(r, root.at("diffusion"));
    if (root.contains("mesh")) {
        const auto& j = root.at("mesh");
        if (r.object(j, "/mesh", {"base_step", "grading_exponent", "cells_per_unit"})) {
            cfg.mesh.base_step = r.number(j, "base_step", "/mesh", false).value_or(cfg.mesh.base_step);
            cfg.mesh.grading_exponent = r.number(j, "grading_exponent", "/mesh", false).value_or(cfg.mesh.grading_exponent);
            cfg.mesh.cells_per_unit = r.number(j, "cells_per_unit", "/mesh", false).value_or(cfg.mesh.cells_per_unit);
        }
    }
    if (root.contains("monte_carlo")) {
        const auto& j = root.at("monte_carlo");
        if (r.object(j, "/monte_carlo", {"n_paths", "seed", "per_path"})) {
            if (auto n = r.integer(j, "n_paths", "/monte_carlo")) {
                if (*n < 1 || *n > 100000000) r.fail("/monte_carlo/n_paths", "must lie in [1, 1e8]");
                cfg.monte_carlo.n_paths = static_cast<int>(std::clamp<std::int64_t>(*n, 1, 100000000));
            }
            cfg.monte_carlo.seed = r.unsigned_integer(j, "seed", "/monte_carlo").value_or(cfg.monte_carlo.seed);
            cfg.monte_carlo.per_path = r.boolean(j, "per_path", "/monte_carlo").value_or(false);
        }
    }
    if (root.contains("eval_ml")) {
        const auto& j = root.at("eval_ml");
        const std::string path = "/eval_ml";
        EvalMLConfig e;
        if (r.object(j, path, {"alpha", "beta", "delta", "tolerance", "max_terms", "z", "matrix", "times", "perturbed_beta"})) {
            e.query.alpha = r.number(j, "alpha", path, true).value_or(1.0);
            e.query.beta = r.number(j, "beta", path, false).value_or(1.0);
            e.query.delta = r.number(j, "delta", path, false).value_or(1.0);
            e.query.tolerance = r.number(j, "tolerance", path, false).value_or(e.query.tolerance);
            if (auto m = r.integer(j, "max_terms", path)) e.query.max_terms = static_cast<int>(std::clamp<std::int64_t>(*m, 0, 1 << 20));
            if (j.contains("z")) e.z = r.numbers(j.at("z"), path + "/z").value_or(std::vector<double>{});
            if (j.contains("matrix")) e.matrix = r.matrix(j.at("matrix"), path + "/matrix");
            if (j.contains("times")) e.times = detail::read_grid(r, j.at("times"), path + "/times");
            e.perturbed_beta = r.number(j, "perturbed_beta", path, false);
            try {
                e.query.validate();
            } catch (const Error& ex) {
                r.fail(path, ex.what());
            }
            if (e.matrix && !is_square(*e.matrix)) r.fail(path + "/matrix", "matrix must be square");
        }
        cfg.eval_ml = e;
    }
    if (root.contains("solve")) {
        const auto& j = root.at("solve");
        SolveConfig s;
        if (r.object(j, "/solve", {"forcing", "oracle"})) {
            if (j.contains("forcing")) s.forcing = r.vector(j.at("forcing"), "/solve/forcing");
            s.oracle = r.boolean(j, "oracle", "/solve").value_or(false);
        }
        cfg.solve = s;
    }
    if (root.contains("simulate")) {
        const auto& j = root.at("simulate");
        SimulateConfig s;
        if (r.object(j, "/simulate", {"scheme"})) s.scheme = r.string(j, "scheme", "/simulate", {"mild", "integral"}).value_or("mild");
        cfg.simulate = s;
    }
    if (root.contains("isometry")) {
        const auto& j = root.at("isometry");
        IsometryConfig s;
        if (r.object(j, "/isometry", {"times"})) {
            if (!j.contains("times"))
                r.fail("/isometry/times", "required grid is missing");
            else
                s.times = detail::read_grid(r, j.at("times"), "/isometry/times");
        }
        cfg.isometry = s;
    }
    if (root.contains("steer")) {
        const auto& j = root.at("steer");
        SteerConfig s;
        if (r.object(j, "/steer", {"mode", "target", "max_iterations", "picard_tolerance"})) {
            const auto mode = r.string(j, "mode", "/steer", {"linear", "nonlinear_causal", "nonlinear_picard"}).value_or("linear");
            s.mode = mode == "linear"             ? SteeringProblem::Mode::linear
                     : mode == "nonlinear_causal" ? SteeringProblem::Mode::nonlinear_causal
                                                  : SteeringProblem::Mode::nonlinear_picard;
            if (!j.contains("target"))
                r.fail("/steer/target", "required vector is missing");
            else if (auto t = r.vector(j.at("target"), "/steer/target"))
                s.target = *t;
            if (auto m = r.integer(j, "max_iterations", "/steer")) {
                if (*m < 1 || *m > 100000) r.fail("/steer/max_iterations", "must lie in [1, 100000]");
                s.max_iterations = static_cast<int>(std::clamp<std::int64_t>(*m, 1, 100000));
            }
            s.picard_tolerance = r.number(j, "picard_tolerance", "/steer", false).value_or(s.picard_tolerance);
        }
        cfg.steer = s;
    }
    if (root.contains("lemma")) {
        const auto& j = root.at("lemma");
        LemmaConfig s;
        if (r.object(j, "/lemma", {"gamma", "alpha", "times"})) {
            if (j.contains("gamma")) s.gammas = r.numbers(j.at("gamma"), "/lemma/gamma").value_or(s.gammas);
            if (j.contains("alpha")) s.alphas = r.numbers(j.at("alpha"), "/lemma/alpha").value_or(s.alphas);
            if (!j.contains("times"))
                r.fail("/lemma/times", "required grid is missing");
            else
                s.times = detail::read_grid(r, j.at("times"), "/lemma/times");
            for (double g : s.gammas)
                if (!(g > 0.0)) r.fail("/lemma/gamma", "every gamma must be positive");
            for (double a : s.alphas)
                if (!(a > 0.5 && a < 1.0)) r.fail("/lemma/alpha", "every alpha must lie in (1/2, 1)");
            for (double t : s.times)
                if (!(t > 0.0)) r.fail("/lemma/times", "every t must be positive");
        }
        cfg.lemma = s;
    }

    // Cross-field checks, only once the structure itself is sound.
    if (r.issues.empty()) {
        auto guard = [&](const std::string& path, auto&& check) {
            try {
                check();
            } catch (const Error& ex) {
                r.fail(path, ex.what());
            }
        };
        guard("/mesh", [&] { cfg.mesh.validate(); });
        if (cfg.system) {
            guard("/system", [&] { cfg.system_spec().validate(); });
            const Eigen::Index n = cfg.system->A.rows();
            if (cfg.diffusion) guard("/diffusion", [&] { cfg.diffusion_spec(n).check(n, cfg.system->T); });
            if (cfg.solve && cfg.solve->forcing && cfg.solve->forcing->size() != n)
                r.fail("/solve/forcing", "length must equal the state dimension " + std::to_string(n));
            if (cfg.steer && cfg.steer->target.size() != n)
                r.fail("/steer/target", "length must equal the state dimension " + std::to_string(n));
        }
        if (cfg.isometry)
            for (double t : cfg.isometry->times)
                if (!(t > 0.0) || (cfg.system && t > cfg.system->T * (1.0 + 1e-12)))
                    r.fail("/isometry/times", "every t must lie in (0, T]");
    }

    if (!command.empty() && r.issues.empty()) {
        auto require = [&](bool present, const char* block) {
            if (!present) r.fail(std::string("/") + block, "block is required by command '" + command + "'");
        };
        const bool stochastic = command == "simulate" || command == "isometry" || command == "steer";
        if (command == "eval-ml") require(cfg.eval_ml.has_value(), "eval_ml");
        if (command == "verify-lemma") require(cfg.lemma.has_value(), "lemma");
        if (command != "eval-ml" && command != "verify-lemma") require(cfg.system.has_value(), "system");
        if (command == "isometry") require(cfg.isometry.has_value(), "isometry");
        if (command == "steer") require(cfg.steer.has_value(), "steer");
        if (cfg.eval_ml && !cfg.eval_ml->times.empty() && command == "eval-ml") require(cfg.system.has_value(), "system");
        if (cfg.system && (stochastic || command == "solve")) {
            auto spec = cfg.system_spec();
            if (stochastic) {
                const bool classical = command == "steer";
                const double a = spec.alpha;
                if (!(a > 0.5 && (a < 1.0 || (classical && a == 1.0))))
                    r.fail("/system/alpha", std::string("command '") + command + "' requires alpha in (1/2, 1" +
                                                (classical ? "]" : ")") + ", got " + std::to_string(a));
            }
            try {
                (void)UniformGrid::build(cfg.mesh, spec.h, spec.T);
            } catch (const Error& ex) {
                r.fail("/mesh/base_step", ex.what());
            }
        }
        if (command == "grammian" && cfg.system) {
            const double a = cfg.system->alpha;
            if (!(a > 0.5 && a <= 1.0))
                r.fail("/system/alpha", "command 'grammian' requires alpha in (1/2, 1], got " + std::to_string(a));
        }
        if (command == "isometry" && cfg.diffusion && (cfg.diffusion->kind == "linear_state" || cfg.diffusion->kind == "sin_state"))
            r.fail("/diffusion/kind", "command 'isometry' needs a deterministic diffusion");
        if (command == "steer" && cfg.steer && cfg.steer->mode == SteeringProblem::Mode::linear && cfg.diffusion &&
            (cfg.diffusion->kind == "linear_state" || cfg.diffusion->kind == "sin_state"))
            r.fail("/steer/mode", "linear steering needs a deterministic diffusion");
    }
    if (!r.issues.empty()) throw ConfigError(r.issues);
    return cfg;
}

/// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t offset) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& ex) {
        const auto [line, col] = line_column(text, ex.byte == 0 ? 0 : ex.byte - 1);
        throw ConfigError(std::vector<std::string>{source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                                   ": JSON parse error: " + ex.what()});
    }
}

inline RunConfig parse_config_text(const std::string& text, const std::string& command = "",
                                   const std::string& source = "<config>") {
    return config_from_json(parse_json_text(text, source), command);
}

inline RunConfig parse_config(const std::string& path, const std::string& command = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(std::vector<std::string>{path + ": cannot open configuration file"});
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), command, path);
}

// ---------------------------------------------------------------- writing

inline json to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json to_json(const Matrix& M) {
    json a = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < M.cols(); ++k) row.push_back(M(i, k));
        a.push_back(row);
    }
    return a;
}

inline json to_json(const std::vector<double>& v) { return json(v); }

/// Canonical form with every default written out; parse(to_json(c)) reproduces c.
inline json to_json(const RunConfig& c) {
    json j = json::object();
    if (c.system) {
        const auto& s = *c.system;
        json phi{{"kind", s.phi.kind}};
        if (s.phi.kind == "constant") phi["value"] = to_json(s.phi.value);
        if (s.phi.kind == "polynomial") {
            phi["coefficients"] = json::array();
            for (const auto& v : s.phi.coefficients) phi["coefficients"].push_back(to_json(v));
        }
        if (s.phi.kind == "spline") {
            phi["knots"] = s.phi.knots;
            phi["values"] = json::array();
            for (const auto& v : s.phi.values) phi["values"].push_back(to_json(v));
        }
        j["system"] = {{"A", to_json(s.A)}, {"B", to_json(s.B)}, {"C", to_json(s.C)}, {"h", s.h},
                       {"alpha", s.alpha},  {"T", s.T},          {"phi", phi}};
    }
    if (c.diffusion) {
        const auto& d = *c.diffusion;
        json o{{"kind", d.kind}};
        if (d.kind == "constant") {
            if (d.matrix)
                o["matrix"] = to_json(*d.matrix);
            else
                o["sigma"] = d.sigma;
        }
        if (d.kind == "linear_state" || d.kind == "sin_state") o["scale"] = d.scale;
        if (d.kind == "custom_table") {
            o["times"] = d.times;
            o["values"] = json::array();
            for (const auto& M : d.values) o["values"].push_back(to_json(M));
        }
        j["diffusion"] = o;
    }
    j["mesh"] = {{"base_step", c.mesh.base_step},
                 {"grading_exponent", c.mesh.grading_exponent},
                 {"cells_per_unit", c.mesh.cells_per_unit}};
    j["monte_carlo"] = {{"n_paths", c.monte_carlo.n_paths}, {"seed", c.monte_carlo.seed}, {"per_path", c.monte_carlo.per_path}};
    if (c.eval_ml) {
        const auto& e = *c.eval_ml;
        json o{{"alpha", e.query.alpha},         {"beta", e.query.beta},           {"delta", e.query.delta},
               {"tolerance", e.query.tolerance}, {"max_terms", e.query.max_terms}, {"z", e.z},
               {"times", e.times}};
        if (e.matrix) o["matrix"] = to_json(*e.matrix);
        if (e.perturbed_beta) o["perturbed_beta"] = *e.perturbed_beta;
        j["eval_ml"] = o;
    }
    if (c.solve) {
        json o{{"oracle", c.solve->oracle}};
        if (c.solve->forcing) o["forcing"] = to_json(*c.solve->forcing);
        j["solve"] = o;
    }
    if (c.simulate) j["simulate"] = {{"scheme", c.simulate->scheme}};
    if (c.isometry) j["isometry"] = {{"times", c.isometry->times}};
    if (c.steer)
        j["steer"] = {{"mode", mode_name(c.steer->mode)},
                      {"target", to_json(c.steer->target)},
                      {"max_iterations", c.steer->max_iterations},
                      {"picard_tolerance", c.steer->picard_tolerance}};
    if (c.lemma) j["lemma"] = {{"gamma", c.lemma->gammas}, {"alpha", c.lemma->alphas}, {"times", c.lemma->times}};
    return j;
}

/// 64-bit FNV-1a of a byte string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Digest of the canonical configuration (keys sorted, defaults filled in).
inline std::string config_digest(const RunConfig& c) { return fnv1a_hex(to_json(c).dump()); }

}  // namespace mlsteer
