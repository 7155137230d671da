#pragma once

// Deterministic solvers for  ^C D^alpha x = A x + B x(t-h) + f(t),  x = phi on [-h, 0].
//
// solve_homogeneous / solve_forced evaluate the variation-of-constants representation on a
// uniform grid. The convolutions are integrated cell by cell against exact kernel
// integrals: the running integral of P_alpha is available in closed form (see
// delayed_ml.hpp) and is tabulated once on a fine lattice, so every cell weight is a
// difference of two table entries and the weak singularity of P_alpha costs nothing.
//
// pece_oracle is an independent fractional Adams-Bashforth-Moulton scheme that never
// touches the delayed Mittag-Leffler functions.

#include "delayed_ml.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "mesh.hpp"
#include "system.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace mlsteer {

using Forcing = std::function<Vector(double)>;
using StateForcing = std::function<Vector(double, const Vector&)>;

struct Trajectory {
    std::vector<double> times;  // history nodes -h + j dt (j < m), then t_k = k dt, k = 0..N
    std::vector<Vector> states;
    std::string method;
    double step = 0.0;
    int history_nodes = 0;  // m; states[m] is x(0)

    /// States on [0, T] only.
    std::vector<Vector> forward() const {
        return {states.begin() + history_nodes, states.end()};
    }
};

/// Tabulated convolution weights for one system on one uniform grid.
class VocTables {
public:
    VocTables(const SystemSpec& spec, const MeshSpec& mesh, MLOptions opts = {})
        : spec_(spec), ml_(spec, opts), grid_(UniformGrid::build(mesh, spec.h, spec.T)) {
        p_ = std::max(1, static_cast<int>(std::ceil(mesh.cells_per_unit * grid_.dt - 1e-9)));
        delta_ = grid_.dt / p_;
    }

    const SystemSpec& spec() const noexcept { return spec_; }
    const DelayedML& ml() const noexcept { return ml_; }
    const UniformGrid& grid() const noexcept { return grid_; }
    int sub_cells() const noexcept { return p_; }
    double sub_step() const noexcept { return delta_; }

    /// Running integral of P_alpha at argument i * delta - h, i = 0 .. N p.
    const std::vector<Matrix>& kernel_integral_table() const {
        if (P_.empty()) {
            const int hi = grid_.steps * p_;
            P_.reserve(static_cast<std::size_t>(hi + 1));
            for (int i = 0; i <= hi; ++i) P_.push_back(ml_.perturbed(spec_.alpha + 1.0, i * delta_ - spec_.h));
        }
        return P_;
    }

    /// Homogeneous part at every grid node t_k, k = 0..N:
    ///   X(t) phi(0) + int_0^{min(t,h)} P_alpha(t-h-r) B (phi(r-h) - phi(0)) dr.
    /// The history enters only through the delayed term, so its deviation from phi(0) acts
    /// as a forcing on (0, h).
    std::vector<Vector> homogeneous() const {
        const auto& P = kernel_integral_table();
        const int mp = grid_.steps_per_delay * p_, N = grid_.steps;
        const Vector phi0 = spec_.phi(0.0);
        std::vector<Vector> g(static_cast<std::size_t>(mp));
        for (int j = 0; j < mp; ++j)
            g[static_cast<std::size_t>(j)] = spec_.B * (spec_.phi(-spec_.h + (j + 0.5) * delta_) - phi0);
        std::vector<Vector> out(static_cast<std::size_t>(N) + 1);
        out[0] = phi0;
        for (int k = 1; k <= N; ++k) {
            CompensatedSum<Vector> acc(ml_.fundamental(grid_.t(k)) * phi0);
            const int top = k * p_;
            for (int j = 0; j < std::min(top, mp); ++j) {
                const Matrix w = P[static_cast<std::size_t>(top - j)] - P[static_cast<std::size_t>(top - j - 1)];
                acc.add(w * g[static_cast<std::size_t>(j)]);
            }
            out[static_cast<std::size_t>(k)] = acc.value();
        }
        return out;
    }

    /// integral_0^{t_k} P_alpha(t_k - h - r) f(r) dr for k = 0..N.
    std::vector<Vector> forced(const Forcing& f) const {
        const auto& P = kernel_integral_table();
        const int N = grid_.steps, np = N * p_;
        const Eigen::Index n = spec_.dim();
        std::vector<Vector> fm(static_cast<std::size_t>(np));
        for (int j = 0; j < np; ++j) {
            fm[static_cast<std::size_t>(j)] = f((j + 0.5) * delta_);
            if (fm[static_cast<std::size_t>(j)].size() != n) throw DimensionError("forcing has wrong dimension");
        }
        std::vector<Matrix> W(static_cast<std::size_t>(np) + 1, Matrix::Zero(n, n));
        for (int i = 1; i <= np; ++i) W[static_cast<std::size_t>(i)] = P[static_cast<std::size_t>(i)] - P[static_cast<std::size_t>(i - 1)];
        std::vector<Vector> out(static_cast<std::size_t>(N) + 1, Vector::Zero(n));
        for (int k = 1; k <= N; ++k) {
            CompensatedSum<Vector> acc(Vector::Zero(n));
            const int top = k * p_;
            for (int j = 0; j < top; ++j) acc.add(W[static_cast<std::size_t>(top - j)] * fm[static_cast<std::size_t>(j)]);
            out[static_cast<std::size_t>(k)] = acc.value();
        }
        return out;
    }

    /// Assemble a trajectory from forward states x_0..x_N.
    Trajectory to_trajectory(std::vector<Vector> forward, std::string method) const {
        Trajectory tr;
        const int m = grid_.steps_per_delay;
        tr.step = grid_.dt;
        tr.history_nodes = m;
        tr.method = std::move(method);
        for (int j = 0; j < m; ++j) {
            const double t = -spec_.h + j * grid_.dt;
            tr.times.push_back(t);
            tr.states.push_back(spec_.phi(t));
        }
        for (int k = 0; k <= grid_.steps; ++k) {
            tr.times.push_back(grid_.t(k));
            tr.states.push_back(std::move(forward[static_cast<std::size_t>(k)]));
        }
        tr.states[static_cast<std::size_t>(m)] = spec_.phi(0.0);
        return tr;
    }

private:
    SystemSpec spec_;
    DelayedML ml_;
    UniformGrid grid_;
    int p_ = 1;
    double delta_ = 0.0;
    mutable std::vector<Matrix> P_;
};

inline Trajectory solve_homogeneous(const SystemSpec& spec, const MeshSpec& mesh) {
    const VocTables tables(spec, mesh);
    return tables.to_trajectory(tables.homogeneous(), "variation-of-constants");
}

inline Trajectory solve_forced(const SystemSpec& spec, const Forcing& f, const MeshSpec& mesh) {
    const VocTables tables(spec, mesh);
    auto x = tables.homogeneous();
    const auto g = tables.forced(f);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += g[k];
    return tables.to_trajectory(std::move(x), "variation-of-constants");
}

/// Fractional Adams-Bashforth-Moulton PECE with the delayed state read from history.
inline Trajectory pece_oracle(const SystemSpec& spec, const StateForcing& f, const MeshSpec& mesh) {
    spec.validate();
    const UniformGrid g = UniformGrid::build(mesh, spec.h, spec.T);
    const int N = g.steps, m = g.steps_per_delay;
    const double a = spec.alpha, dt = g.dt;
    const Vector x0 = spec.phi(0.0);

    std::vector<Vector> x(static_cast<std::size_t>(N) + 1), F(static_cast<std::size_t>(N) + 1);
    auto delayed = [&](int k) -> Vector {
        return k <= m ? spec.phi(g.t(k) - spec.h) : x[static_cast<std::size_t>(k - m)];
    };
    auto rhs = [&](int k, const Vector& xk) -> Vector {
        return spec.A * xk + spec.B * delayed(k) + f(g.t(k), xk);
    };
    x[0] = x0;
    F[0] = rhs(0, x0);
    const double cp = std::pow(dt, a) / std::tgamma(a + 1.0);
    const double cc = std::pow(dt, a) / std::tgamma(a + 2.0);
    for (int n = 0; n < N; ++n) {
        Vector pred = Vector::Zero(x0.size());
        Vector corr = Vector::Zero(x0.size());
        for (int j = 0; j <= n; ++j) {
            const double bj = std::pow(n + 1.0 - j, a) - std::pow(static_cast<double>(n - j), a);
            double aj;
            if (j == 0)
                aj = std::pow(static_cast<double>(n), a + 1.0) - (n - a) * std::pow(n + 1.0, a);
            else
                aj = std::pow(n - j + 2.0, a + 1.0) + std::pow(static_cast<double>(n - j), a + 1.0) -
                     2.0 * std::pow(n - j + 1.0, a + 1.0);
            pred += bj * F[static_cast<std::size_t>(j)];
            corr += aj * F[static_cast<std::size_t>(j)];
        }
        pred = x0 + cp * pred;
        const Vector xn = x0 + cc * (rhs(n + 1, pred) + corr);
        x[static_cast<std::size_t>(n) + 1] = xn;
        F[static_cast<std::size_t>(n) + 1] = rhs(n + 1, xn);
    }

    Trajectory tr;
    tr.step = dt;
    tr.history_nodes = m;
    tr.method = "pece";
    for (int j = 0; j < m; ++j) {
        tr.times.push_back(-spec.h + j * dt);
        tr.states.push_back(spec.phi(-spec.h + j * dt));
    }
    for (int k = 0; k <= N; ++k) {
        tr.times.push_back(g.t(k));
        tr.states.push_back(x[static_cast<std::size_t>(k)]);
    }
    return tr;
}

inline Trajectory pece_oracle(const SystemSpec& spec, const Forcing& f, const MeshSpec& mesh) {
    return pece_oracle(spec, StateForcing([&f](double t, const Vector&) { return f(t); }), mesh);
}

inline Forcing zero_forcing(Eigen::Index n) {
    return [n](double) { return Vector::Zero(n); };
}

struct MLInequalityRow {
    double t = 0.0;
    double lhs = 0.0;
    double rhs = 0.0;
    double gap_error = 0.0;  // |rhs - lhs - 1|
};

struct MLInequalityReport {
    double gamma = 0.0;
    double alpha = 0.0;
    std::vector<MLInequalityRow> rows;
    double max_violation = 0.0;  // max(lhs - rhs), <= 0 when the inequality holds
    double max_gap_error = 0.0;
};

/// Checks (g / Gamma(2a-1)) int_0^t (t-s)^{2a-2} E_{2a-1}(g s^{2a-1}) ds <= E_{2a-1}(g t^{2a-1}).
/// Both sides can be of order 1e28 on desk-scale inputs while their difference is 1, so the
/// quadrature and the series run in 50-digit arithmetic.
inline MLInequalityReport verify_ml_inequality(double gamma, double alpha, const std::vector<double>& t_grid) {
    using Real = boost::multiprecision::cpp_bin_float_50;
    if (!(gamma > 0.0)) throw DomainError("verify_ml_inequality: gamma must be positive");
    if (!(alpha > 0.5 && alpha < 1.0)) throw DomainError("verify_ml_inequality: alpha must lie in (1/2, 1)");
    for (double t : t_grid)
        if (!(t > 0.0)) throw DomainError("verify_ml_inequality: all t must be positive");

    const Real mu = Real(2 * alpha - 1);
    const Real g = Real(gamma);
    double tmax = 0.0;
    for (double t : t_grid) tmax = std::max(tmax, t);

    // Coefficients 1 / Gamma(k mu + 1) up to the order needed at the largest argument.
    std::vector<Real> coef;
    {
        const Real zmax = g * pow(Real(tmax), mu);
        Real peak = 0;
        for (int k = 0;; ++k) {
            const Real c = 1 / boost::multiprecision::tgamma(k * mu + 1);
            coef.push_back(c);
            const Real term = c * pow(zmax, k);
            if (term > peak) peak = term;
            if (k > 8 && term < peak * Real(1e-42)) break;
            if (k > 20000) throw ConvergenceError("verify_ml_inequality: Mittag-Leffler series did not converge");
        }
    }
    auto E = [&](const Real& z) {
        Real s = 0, zk = 1;
        for (const auto& c : coef) {
            const Real term = c * zk;
            s += term;
            if (zk > 1 && term < s * Real(1e-42)) break;
            zk *= z;
        }
        return s;
    };

    boost::math::quadrature::tanh_sinh<Real> integrator(12);
    const Real inv_gamma_mu = 1 / boost::multiprecision::tgamma(mu);
    MLInequalityReport rep;
    rep.gamma = gamma;
    rep.alpha = alpha;
    rep.max_violation = -std::numeric_limits<double>::infinity();
    for (double td : t_grid) {
        const Real t = Real(td);
        // xc is the distance to the nearer endpoint, used for (t - s) near s = t.
        auto integrand = [&](const Real& s, const Real& xc) {
            const Real dist = s > t / 2 ? xc : t - s;
            return pow(dist, mu - 1) * E(g * pow(s, mu));
        };
        const Real rhs = E(g * pow(t, mu));
        // Relative tolerance that still resolves an absolute gap of 1e-12.
        Real tol = Real(1e-12) / (rhs > 1 ? rhs : Real(1));
        if (tol < Real(1e-40)) tol = Real(1e-40);
        Real err = 0;
        const Real I = integrator.integrate(integrand, Real(0), t, sqrt(tol), &err);
        const Real lhs = g * inv_gamma_mu * I;
        MLInequalityRow row;
        row.t = td;
        row.lhs = static_cast<double>(lhs);
        row.rhs = static_cast<double>(rhs);
        row.gap_error = static_cast<double>(abs(rhs - lhs - 1));
        rep.max_violation = std::max(rep.max_violation, static_cast<double>(lhs - rhs));
        rep.max_gap_error = std::max(rep.max_gap_error, row.gap_error);
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace mlsteer
