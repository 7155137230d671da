#pragma once

// Controllability analysis and steering for the controlled delay system
//   ^C D^alpha x = A x + B x(t-h) + C u(t) + Delta(t, x) dW/dt.
//
// With K(s) = P_alpha(s) the delayed perturbation, the Grammian over [r, T] is
//   G(r) = int_r^T K(T-h-s) C C^T K(T-h-s)^T ds,   Gamma_T = G(0).
// The steering law is u(t) = C^T K(T-h-t)^T v(t) with
//   v(t) = Gamma_T^{-1} (x1 - deterministic part) - int_0^t G(s)^{-1} K(T-h-s) Delta dW(s),
// which is the causal (F_t-conditional) form of the inverse controllability operator.

#include "delayed_ml.hpp"
#include "detsolver.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "mesh.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "sde_sim.hpp"
#include "system.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace mlsteer {

// ---------------------------------------------------------------- algebraic tests

/// Coefficients of det(lambda I - A), highest degree first (leading 1).
inline std::vector<double> char_poly(const Matrix& A) {
    if (!is_square(A)) throw DimensionError("char_poly: matrix must be square");
    const Eigen::Index n = A.rows();
    std::vector<double> c(static_cast<std::size_t>(n) + 1, 0.0);
    c[0] = 1.0;
    Matrix M = Matrix::Zero(n, n);
    const Matrix I = Matrix::Identity(n, n);
    for (Eigen::Index k = 1; k <= n; ++k) {
        M = A * M + c[static_cast<std::size_t>(k - 1)] * I;
        c[static_cast<std::size_t>(k)] = 0.0 - (A * M).trace() / static_cast<double>(k);
    }
    return c;
}

/// ||p(A)|| for the polynomial with coefficients `c` (highest first).
inline double cayley_hamilton_residual(const Matrix& A, const std::vector<double>& c) {
    const Eigen::Index n = A.rows();
    Matrix P = Matrix::Zero(n, n);
    for (double ci : c) P = P * A + ci * Matrix::Identity(n, n);
    return op_norm(P);
}

inline int numerical_rank(const Matrix& M, double rel = 1e-10) {
    if (M.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > rel * s(0)) ++r;
    return r;
}

struct KalmanResult {
    Matrix H;
    int rank = 0;
};

/// H_n = [A^i B^j C], j = 0..n-1 outer, i = 0..n-1 inner.
inline KalmanResult kalman_rank(const SystemSpec& spec) {
    spec.validate();
    const Eigen::Index n = spec.dim(), m = spec.C.cols();
    KalmanResult r;
    r.H.resize(n, n * n * m);
    Matrix Bj = Matrix::Identity(n, n);
    Eigen::Index col = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        Matrix block = Bj * spec.C;
        for (Eigen::Index i = 0; i < n; ++i) {
            r.H.middleCols(col, m) = block;
            col += m;
            block = spec.A * block;
        }
        Bj = Bj * spec.B;
    }
    r.rank = numerical_rank(r.H);
    return r;
}

// ---------------------------------------------------------------- Grammian

namespace detail {
inline Matrix grammian_integrand(const DelayedML& ml, const Matrix& C, double alpha, double arg) {
    const Matrix KC = ml.perturbed(alpha, arg) * C;
    return KC * KC.transpose();
}

/// int_lo^hi K(T-h-r) C C^T K(T-h-r)^T dr; singular toward r = T when hi == T.
inline Matrix grammian_piece(const DelayedML& ml, const SystemSpec& spec, double lo, double hi, int cells, double grading) {
    const double T = spec.T, a = spec.alpha, mu = 2.0 * a - 2.0;
    const Eigen::Index n = spec.dim();
    ProductRule rule;
    rule.cells = cells;
    rule.grading = grading;
    if (hi >= T) {
        // The regular factor behaves like (T - r)^alpha at the singular end; the grading makes
        // the first cell's error second order.
        rule.placement = Grading::right;
        rule.grading = std::max(grading, 3.0 / (3.0 * a - 1.0));
        return product_integrate(
            [&](double r) { return Matrix(grammian_integrand(ml, spec.C, a, T - spec.h - r) * std::pow(T - r, -mu)); },
            mu, lo, hi, T, rule, Matrix(Matrix::Zero(n, n)));
    }
    rule.placement = Grading::both;
    return product_integrate([&](double r) { return grammian_integrand(ml, spec.C, a, T - spec.h - r); }, 0.0, lo, hi, hi,
                             rule, Matrix(Matrix::Zero(n, n)));
}

inline Matrix symmetrize(const Matrix& M) { return 0.5 * (M + M.transpose()); }
}  // namespace detail

/// Gamma_T by product integration on pieces split at the kernel breakpoints r = T - k h.
inline Matrix grammian_matrix(const SystemSpec& spec, const MeshSpec& mesh = {}) {
    spec.validate();
    spec.require_stochastic_order(true);
    mesh.validate();
    const DelayedML ml(spec);
    const Eigen::Index n = spec.dim();
    Matrix G = Matrix::Zero(n, n);
    if (spec.C.isZero(0.0)) return G;
    for (int k = 0;; ++k) {
        const double hi = spec.T - k * spec.h;
        if (hi <= 0.0) break;
        const double lo = std::max(0.0, spec.T - (k + 1) * spec.h);
        const int cells = std::max(64, static_cast<int>(std::ceil(mesh.cells_per_unit * (hi - lo))));
        G += detail::grammian_piece(ml, spec, lo, hi, cells, std::max(2.0, mesh.grading_exponent));
    }
    return detail::symmetrize(G);
}

struct ControllabilityReport {
    Matrix grammian;
    double min_eig = 0.0;
    double max_eig = 0.0;
    double eig_threshold = 0.0;
    double coercivity_gamma = 0.0;
    Matrix h_matrix;
    int h_matrix_rank = 0;
    int h_matrix_cols = 0;
    bool grammian_positive = false;
    bool rank_full = false;
    bool controllable = false;  // both tests agree on controllable
    bool tests_agree = true;
    std::vector<double> char_poly;
    double cayley_hamilton_residual = 0.0;
};

/// Relative threshold for "positive definite": 1e-8 * trace / n.
inline double grammian_threshold(const Matrix& G) { return 1e-8 * std::max(0.0, G.trace()) / static_cast<double>(G.rows()); }

inline ControllabilityReport analyze_controllability(const SystemSpec& spec, const MeshSpec& mesh = {}) {
    ControllabilityReport r;
    r.grammian = grammian_matrix(spec, mesh);
    Eigen::SelfAdjointEigenSolver<Matrix> es(r.grammian);
    r.min_eig = es.eigenvalues().minCoeff();
    r.max_eig = es.eigenvalues().maxCoeff();
    r.eig_threshold = grammian_threshold(r.grammian);
    r.coercivity_gamma = r.min_eig;
    r.grammian_positive = r.min_eig > r.eig_threshold && r.max_eig > 0.0;
    const auto kr = kalman_rank(spec);
    r.h_matrix = kr.H;
    r.h_matrix_rank = kr.rank;
    r.h_matrix_cols = static_cast<int>(kr.H.cols());
    r.rank_full = kr.rank == spec.dim();
    r.tests_agree = r.rank_full == r.grammian_positive;
    r.controllable = r.rank_full && r.grammian_positive;
    r.char_poly = char_poly(spec.A);
    r.cayley_hamilton_residual = cayley_hamilton_residual(spec.A, r.char_poly);
    return r;
}

struct CoercivityResult {
    double gamma = 0.0;
    bool satisfied = false;
};

inline CoercivityResult coercivity_check(const ControllabilityReport& report) {
    return {report.min_eig, report.grammian_positive};
}

// ---------------------------------------------------------------- hypothesis constants

struct SteeringProblem {
    enum class Mode { linear, nonlinear_causal, nonlinear_picard };

    SystemSpec spec;
    DiffusionSpec diff;
    MeshSpec mesh;
    Vector target;
    Mode mode = Mode::nonlinear_causal;
    int max_iterations = 50;
    double picard_tolerance = 1e-14;

    void validate() const {
        spec.validate();
        spec.require_stochastic_order(true);
        if (target.size() != spec.dim()) throw DimensionError("steering target has the wrong dimension");
        if (!target.allFinite()) throw DomainError("steering target must be finite");
        if (mode == Mode::linear && !diff.deterministic())
            throw DomainError("linear steering requires a deterministic diffusion");
        if (max_iterations < 1) throw DomainError("max_iterations must be >= 1");
    }
};

inline const char* mode_name(SteeringProblem::Mode m) {
    switch (m) {
        case SteeringProblem::Mode::linear: return "linear";
        case SteeringProblem::Mode::nonlinear_causal: return "nonlinear_causal";
        case SteeringProblem::Mode::nonlinear_picard: return "nonlinear_picard";
    }
    return "unknown";
}

struct HypothesisConstants {
    double M = 0.0;
    double N = 0.0;
    double K = 0.0;
    bool K_floored = false;
    double k1 = 0.0;
    double LT_star_bound = 0.0;
    double lambda = 0.0;
    double rho = 0.0;
    double C1 = 0.0;
    double C2 = 0.0;
    bool h3_holds = false;  // lambda < 1
    bool h4_holds = false;  // rho < 1
};

namespace detail {
/// Inverse of a symmetric positive definite matrix through its eigendecomposition.
inline Matrix spd_inverse(const Matrix& G, double threshold) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    const double lo = es.eigenvalues().minCoeff();
    if (!(lo > threshold) || !(es.eigenvalues().maxCoeff() > 0.0))
        throw SingularGrammianError("Grammian is not positive definite: min eigenvalue " + std::to_string(lo) +
                                    " <= threshold " + std::to_string(threshold));
    return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

/// Pseudo-inverse with eigenvalue cutoff rel * max_eig.
inline Matrix spd_pinv(const Matrix& G, double rel = 1e-10) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    const double top = es.eigenvalues().maxCoeff();
    Vector inv = Vector::Zero(G.rows());
    if (top > 0.0)
        for (Eigen::Index i = 0; i < inv.size(); ++i)
            if (es.eigenvalues()(i) > rel * top) inv(i) = 1.0 / es.eigenvalues()(i);
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

inline HypothesisConstants hypothesis_constants(const SteeringProblem& prob) {
    prob.spec.validate();
    const SystemSpec& s = prob.spec;
    const DelayedML ml(s);
    HypothesisConstants h;
    for (int i = 0; i < 1024; ++i) {
        const double t = s.T * i / 1023.0;
        h.M = std::max(h.M, op_norm(ml.fundamental(t)));
        h.N = std::max(h.N, op_norm(ml.perturbed(s.alpha, t)));
    }
    const Vector p0 = s.phi(0.0), ph = s.phi(-s.h);
    const double denom = ph.norm();
    h.K_floored = denom < 1e-12;
    h.K = (p0 - ph).norm() / std::max(denom, 1e-12);

    const Matrix G = grammian_matrix(s, prob.mesh);
    const Matrix Ginv = detail::spd_inverse(G, grammian_threshold(G));
    const double nginv = op_norm(Ginv);
    h.k1 = nginv * nginv;
    const double nC = op_norm(s.C), L = prob.diff.lipschitz_const;
    h.LT_star_bound = h.N * nC * std::sqrt(s.T);
    h.lambda = 16.0 * h.N * h.N * nC * nC * h.LT_star_bound * h.LT_star_bound * h.k1;
    h.rho = h.N * h.N * L * L * s.T;
    h.C1 = h.M * h.M * (4.0 + h.lambda) * (1.0 + h.K * h.K) * denom * denom;
    h.C2 = h.N * h.N * L * L * (4.0 + h.lambda * h.K * h.K) * s.T;
    h.h3_holds = h.lambda < 1.0;
    h.h4_holds = h.rho < 1.0;
    return h;
}

// ---------------------------------------------------------------- synthesis

struct ControlLaw {
    std::vector<double> times;  // t_0 .. t_{N-1}
    int n_paths = 0;
    int control_dim = 0;
    std::vector<double> values;  // [path][node][component]
    std::vector<double> energy;  // per path, sum ||u_k||^2 dt
    bool per_path = false;

    Vector value(int p, int k) const {
        const std::size_t off = (static_cast<std::size_t>(p) * times.size() + k) * control_dim;
        return Eigen::Map<const Vector>(values.data() + off, control_dim);
    }
};

struct SteeringResult {
    ControlLaw law;
    PathEnsemble steered;
    std::string mode;
    int iterations = 0;
    std::vector<double> picard_gaps;
    std::vector<double> picard_ratios;
    bool converged = true;
    bool contractive = true;
    double terminal_mean_sq_error = 0.0;  // E||x(T) - x1||^2
    double terminal_mean_sq_se = 0.0;     // Monte Carlo standard error of the above
    double terminal_bias = 0.0;           // ||E x(T) - x1||
    std::vector<std::string> diagnostics;
};

/// Everything the steering recursion needs that does not depend on the path.
class SteeringPlan {
public:
    explicit SteeringPlan(const SteeringProblem& prob) : prob_(prob), kernel_(prob.spec, prob.mesh) {
        prob.validate();
        const SystemSpec& s = prob.spec;
        const UniformGrid& g = kernel_.grid();
        const int N = g.steps;
        const Eigen::Index n = s.dim();
        const double a = s.alpha, dt = g.dt;
        hom_ = kernel_.tables().homogeneous();

        // Cell Grammians, accumulated from the right into remaining-horizon Grammians.
        const DelayedML& ml = kernel_.tables().ml();
        std::vector<Matrix> cell(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k)
            cell[static_cast<std::size_t>(k)] =
                detail::grammian_piece(ml, s, g.t(k), k + 1 == N ? s.T : g.t(k + 1), k + 1 == N ? 256 : 24, 3.0);
        remaining_inv_.assign(static_cast<std::size_t>(N) + 1, Matrix::Zero(n, n));
        Matrix acc = Matrix::Zero(n, n);
        for (int k = N - 1; k >= 1; --k) {
            acc += cell[static_cast<std::size_t>(k)];
            remaining_inv_[static_cast<std::size_t>(k)] = detail::spd_pinv(detail::symmetrize(acc));
        }
        acc += cell[0];
        grammian_ = detail::symmetrize(acc);
        grammian_inv_ = detail::spd_inverse(grammian_, grammian_threshold(grammian_));

        // Control input weights. Between nodes the control keeps the kernel's singular
        // shape, u(r) = u_k ((T - r) / (T - t_k))^{alpha - 1}; the plant kernel is integrated
        // against that shape exactly at t = T and by its cell integral at interior nodes.
        const auto& P = kernel_.tables().kernel_integral_table();
        const int p = kernel_.tables().sub_cells();
        interior_.resize(static_cast<std::size_t>(N) + 1);
        terminal_.resize(static_cast<std::size_t>(N) + 1);
        hold_.resize(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) {
            const double m = N - k;
            hold_[static_cast<std::size_t>(k)] = (std::pow(m, a) - std::pow(m - 1.0, a)) / a * std::pow(m, 1.0 - a);
        }
        for (int m = 1; m <= N; ++m) {
            interior_[static_cast<std::size_t>(m)] =
                (P[static_cast<std::size_t>(m * p)] - P[static_cast<std::size_t>((m - 1) * p)]) * s.C;
            const double right = m * dt;  // T - t_k for lag m = N - k
            ProductRule rule;
            Matrix w;
            if (m == 1) {
                const double mu = 2.0 * a - 2.0;
                rule.cells = 256;
                rule.grading = 3.0;
                rule.placement = Grading::right;
                w = product_integrate(
                    [&](double v) { return Matrix(ml.perturbed(a, right - s.h - v) * std::pow(dt - v, 1.0 - a)); }, mu,
                    0.0, dt, dt, rule, Matrix(Matrix::Zero(n, n)));
            } else {
                rule.cells = 24;
                rule.grading = 3.0;
                rule.placement = Grading::both;
                w = product_integrate(
                    [&](double v) { return Matrix(ml.perturbed(a, right - s.h - v) * std::pow(right - v, a - 1.0)); }, 0.0,
                    0.0, dt, dt, rule, Matrix(Matrix::Zero(n, n)));
            }
            terminal_[static_cast<std::size_t>(m)] = std::pow(right, 1.0 - a) * w * s.C;
        }
        gain_.resize(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) gain_[static_cast<std::size_t>(k)] = s.C.transpose() * kernel_.node(N - k).transpose();
        v0_ = grammian_inv_ * (prob.target - hom_[static_cast<std::size_t>(N)]);
    }

    const SteeringProblem& problem() const noexcept { return prob_; }
    const UniformGrid& grid() const noexcept { return kernel_.grid(); }
    const Matrix& grammian() const noexcept { return grammian_; }
    const MildKernel& kernel() const noexcept { return kernel_; }

    /// One path of the closed-loop recursion. `noise(k, x_k)` returns Delta(t_k, .) dW_k for
    /// the state the mode prescribes. Writes states x_0..x_N and controls u_0..u_{N-1}.
    template <class Noise>
    void run_path(Noise&& noise, std::vector<Vector>& x, std::vector<Vector>& u) const {
        const int N = grid().steps;
        const Eigen::Index n = prob_.spec.dim();
        x.assign(static_cast<std::size_t>(N) + 1, Vector::Zero(n));
        u.assign(static_cast<std::size_t>(N), Vector::Zero(prob_.spec.C.cols()));
        std::vector<Vector> g(static_cast<std::size_t>(N), Vector::Zero(n));
        Vector v = v0_;
        for (int k = 0; k <= N; ++k) {
            Vector xk = hom_[static_cast<std::size_t>(k)];
            for (int j = 0; j < k; ++j) {
                xk.noalias() += kernel_.weight(k - j) * g[static_cast<std::size_t>(j)];
                if (k == N)
                    xk.noalias() += terminal_[static_cast<std::size_t>(k - j)] * u[static_cast<std::size_t>(j)];
                else
                    xk.noalias() += hold_[static_cast<std::size_t>(j)] * (interior_[static_cast<std::size_t>(k - j)] * u[static_cast<std::size_t>(j)]);
            }
            x[static_cast<std::size_t>(k)] = xk;
            if (k == N) break;
            if (k > 0) {
                // Compensate the noise injected over cell k-1, as seen at t = T.
                const Vector nu = kernel_.weight(N - (k - 1)) * g[static_cast<std::size_t>(k - 1)];
                v.noalias() -= remaining_inv_[static_cast<std::size_t>(k)] * nu;
            }
            u[static_cast<std::size_t>(k)] = gain_[static_cast<std::size_t>(k)] * v;
            g[static_cast<std::size_t>(k)] = noise(k, xk);
        }
    }

private:
    SteeringProblem prob_;
    MildKernel kernel_;
    std::vector<Vector> hom_;
    Matrix grammian_, grammian_inv_;
    std::vector<Matrix> remaining_inv_;
    std::vector<Matrix> interior_, terminal_, gain_;
    std::vector<double> hold_;
    Vector v0_;
};

namespace detail {
inline void finish_result(const SteeringPlan& plan, SteeringResult& r) {
    const auto& prob = plan.problem();
    const int N = plan.grid().steps, P = r.steered.n_paths;
    std::vector<double> err(static_cast<std::size_t>(P));
    Vector mean = Vector::Zero(prob.spec.dim());
    std::vector<double> comp(static_cast<std::size_t>(P));
    for (int p = 0; p < P; ++p) err[static_cast<std::size_t>(p)] = (r.steered.state(p, N) - prob.target).squaredNorm();
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        for (int p = 0; p < P; ++p) comp[static_cast<std::size_t>(p)] = r.steered.state(p, N)(i);
        mean(i) = pairwise_sum(comp) / P;
    }
    r.terminal_mean_sq_error = pairwise_sum(err) / P;
    for (int p = 0; p < P; ++p) {
        const double d = err[static_cast<std::size_t>(p)] - r.terminal_mean_sq_error;
        err[static_cast<std::size_t>(p)] = d * d;
    }
    r.terminal_mean_sq_se = P > 1 ? std::sqrt(pairwise_sum(err) / (P - 1) / P) : 0.0;
    r.terminal_bias = (mean - prob.target).norm();
}

inline SteeringResult init_result(const SteeringPlan& plan, const PathEnsemble& ens, const char* mode) {
    const auto& prob = plan.problem();
    const int N = plan.grid().steps;
    SteeringResult r;
    r.mode = mode;
    r.steered = ens;
    r.steered.scheme = "steered";
    r.steered.allocate_states(static_cast<int>(prob.spec.dim()));
    r.law.n_paths = ens.n_paths;
    r.law.control_dim = static_cast<int>(prob.spec.C.cols());
    for (int k = 0; k < N; ++k) r.law.times.push_back(plan.grid().t(k));
    r.law.values.assign(static_cast<std::size_t>(ens.n_paths) * N * r.law.control_dim, 0.0);
    r.law.energy.assign(static_cast<std::size_t>(ens.n_paths), 0.0);
    r.law.per_path = !prob.diff.is_zero();
    return r;
}

inline void store_path(SteeringResult& r, int p, const std::vector<Vector>& x, const std::vector<Vector>& u, double dt) {
    const int N = static_cast<int>(u.size());
    for (int k = 0; k <= N; ++k) r.steered.set_state(p, k, x[static_cast<std::size_t>(k)]);
    double e = 0.0;
    for (int k = 0; k < N; ++k) {
        const std::size_t off = (static_cast<std::size_t>(p) * N + k) * r.law.control_dim;
        Eigen::Map<Vector>(r.law.values.data() + off, r.law.control_dim) = u[static_cast<std::size_t>(k)];
        e += u[static_cast<std::size_t>(k)].squaredNorm() * dt;
    }
    r.law.energy[static_cast<std::size_t>(p)] = e;
}

inline void check_steering_ensemble(const SteeringPlan& plan, const PathEnsemble& ens) {
    const auto& prob = plan.problem();
    if (ens.increments.empty()) throw DomainError("steering needs an ensemble with Brownian increments");
    if (ens.grid.steps != plan.grid().steps || ens.grid.dt != plan.grid().dt)
        throw DomainError("ensemble grid does not match the steering mesh");
    if (ens.noise_dim != prob.diff.noise_dim) throw DimensionError("ensemble noise dimension does not match the diffusion");
    prob.diff.check(prob.spec.dim(), prob.spec.T);
}

inline SteeringResult run_causal(const SteeringPlan& plan, const PathEnsemble& ens, const char* mode) {
    check_steering_ensemble(plan, ens);
    const auto& prob = plan.problem();
    SteeringResult r = init_result(plan, ens, mode);
    parallel_for(static_cast<std::size_t>(ens.n_paths), [&](std::size_t pi) {
        const int p = static_cast<int>(pi);
        std::vector<Vector> x, u;
        plan.run_path([&](int k, const Vector& xk) { return Vector(prob.diff(ens.grid.t(k), xk) * ens.increment(p, k)); },
                      x, u);
        store_path(r, p, x, u, ens.grid.dt);
    });
    finish_result(plan, r);
    return r;
}
}  // namespace detail

inline SteeringResult synthesize_linear_control(const SteeringProblem& prob, const PathEnsemble& ens) {
    SteeringProblem lin = prob;
    lin.mode = SteeringProblem::Mode::linear;
    const SteeringPlan plan(lin);
    return detail::run_causal(plan, ens, "linear");
}

/// Picard iteration of the closed-loop map against frozen increments; the k-th iterate
/// evaluates Delta on the previous iterate's states.
inline SteeringResult steer_picard(const SteeringPlan& plan, const PathEnsemble& ens, double rho) {
    detail::check_steering_ensemble(plan, ens);
    const auto& prob = plan.problem();
    const int N = plan.grid().steps, P = ens.n_paths;
    SteeringResult r = detail::init_result(plan, ens, "nonlinear_picard");
    if (!(rho < 1.0)) {
        r.contractive = false;
        r.converged = false;
        r.diagnostics.push_back("non-contractive: rho = N^2 L^2 T = " + std::to_string(rho) + " >= 1; Picard iteration skipped");
        return r;
    }
    // Start from the uncontrolled deterministic path.
    PathEnsemble prev = ens;
    prev.allocate_states(static_cast<int>(prob.spec.dim()));
    const auto hom = plan.kernel().tables().homogeneous();
    for (int p = 0; p < P; ++p)
        for (int k = 0; k <= N; ++k) prev.set_state(p, k, hom[static_cast<std::size_t>(k)]);
    r.converged = false;
    for (int it = 1; it <= prob.max_iterations; ++it) {
        parallel_for(static_cast<std::size_t>(P), [&](std::size_t pi) {
            const int p = static_cast<int>(pi);
            std::vector<Vector> x, u;
            plan.run_path(
                [&](int k, const Vector&) { return Vector(prob.diff(ens.grid.t(k), prev.state(p, k)) * ens.increment(p, k)); },
                x, u);
            detail::store_path(r, p, x, u, ens.grid.dt);
        });
        const auto gap = mean_square_gap(r.steered, prev);
        double sup = 0.0;
        for (double v : gap) sup = std::max(sup, v);
        r.picard_gaps.push_back(sup);
        if (r.picard_gaps.size() >= 2) {
            const double before = r.picard_gaps[r.picard_gaps.size() - 2];
            r.picard_ratios.push_back(before > 0.0 ? sup / before : 0.0);
        }
        r.iterations = it;
        prev.states = r.steered.states;
        if (sup <= prob.picard_tolerance) {
            r.converged = true;
            break;
        }
    }
    detail::finish_result(plan, r);
    if (!r.converged) {
        const double last = r.picard_ratios.empty() ? 0.0 : r.picard_ratios.back();
        throw ConvergenceError("Picard steering did not converge within " + std::to_string(prob.max_iterations) +
                               " iterations (last ratio " + std::to_string(last) + ")");
    }
    return r;
}

inline SteeringResult steer_nonlinear(const SteeringProblem& prob, const PathEnsemble& ens) {
    const SteeringPlan plan(prob);
    if (prob.mode == SteeringProblem::Mode::nonlinear_picard) {
        const auto hc = hypothesis_constants(prob);
        return steer_picard(plan, ens, hc.rho);
    }
    return detail::run_causal(plan, ens, mode_name(prob.mode));
}

}  // namespace mlsteer
