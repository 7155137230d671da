#pragma once

// Monte Carlo simulation of
//   ^C D^alpha x = A x + B x(t-h) + Delta(t, x) dW/dt,   x = phi on [-h, 0],
// via the mild (variation-of-constants) representation and, independently, via the
// Volterra integral form. Both schemes are left-point (adapted) in Delta.

#include "delayed_ml.hpp"
#include "detsolver.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "mesh.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "specfun.hpp"
#include "system.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace mlsteer {

/// Noise coefficient Delta(t, x), an n x d matrix.
struct DiffusionSpec {
    enum class Kind { deterministic, state_dependent };

    Kind kind = Kind::deterministic;
    Eigen::Index state_dim = 1;
    Eigen::Index noise_dim = 1;
    std::function<Matrix(double, const Vector&)> fn;
    double lipschitz_const = 0.0;
    double sup_at_zero = 0.0;
    std::string name = "zero";

    Matrix operator()(double t, const Vector& x) const { return fn(t, x); }
    bool deterministic() const noexcept { return kind == Kind::deterministic; }
    bool is_zero() const noexcept { return name == "zero"; }

    static DiffusionSpec zero(Eigen::Index n) {
        DiffusionSpec d;
        d.state_dim = d.noise_dim = n;
        d.fn = [n](double, const Vector&) { return Matrix::Zero(n, n); };
        return d;
    }

    /// Delta = sigma I.
    static DiffusionSpec constant(Eigen::Index n, double sigma) {
        return constant_matrix(sigma * Matrix::Identity(n, n), "constant");
    }

    static DiffusionSpec constant_matrix(const Matrix& m, std::string name = "constant") {
        DiffusionSpec d;
        d.state_dim = m.rows();
        d.noise_dim = m.cols();
        d.fn = [m](double, const Vector&) { return m; };
        d.sup_at_zero = op_norm(m);
        d.name = m.isZero(0.0) ? "zero" : std::move(name);
        return d;
    }

    /// Delta(t, x) = scale diag(x).
    static DiffusionSpec linear_state(Eigen::Index n, double scale) {
        DiffusionSpec d;
        d.kind = Kind::state_dependent;
        d.state_dim = d.noise_dim = n;
        d.fn = [scale](double, const Vector& x) { return Matrix((scale * x).asDiagonal()); };
        d.lipschitz_const = std::abs(scale);
        d.name = "linear_state";
        return d;
    }

    /// Delta(t, x) = scale diag(sin x).
    static DiffusionSpec sin_state(Eigen::Index n, double scale) {
        DiffusionSpec d;
        d.kind = Kind::state_dependent;
        d.state_dim = d.noise_dim = n;
        d.fn = [scale](double, const Vector& x) { return Matrix((scale * x.array().sin()).matrix().asDiagonal()); };
        d.lipschitz_const = std::abs(scale);
        d.name = "sin_state";
        return d;
    }

    /// Deterministic Delta(t) interpolated linearly between tabulated matrices,
    /// held constant outside the table.
    static DiffusionSpec custom_table(std::vector<double> times, std::vector<Matrix> values) {
        if (times.empty() || times.size() != values.size())
            throw DomainError("custom_table diffusion: need matching, nonempty times and values");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1])) throw DomainError("custom_table diffusion: times must increase");
        for (const auto& v : values)
            if (v.rows() != values.front().rows() || v.cols() != values.front().cols())
                throw DimensionError("custom_table diffusion: matrices differ in shape");
        DiffusionSpec d;
        d.state_dim = values.front().rows();
        d.noise_dim = values.front().cols();
        for (const auto& v : values) d.sup_at_zero = std::max(d.sup_at_zero, op_norm(v));
        d.fn = [times, values](double t, const Vector&) -> Matrix {
            if (t <= times.front()) return values.front();
            if (t >= times.back()) return values.back();
            const auto it = std::upper_bound(times.begin(), times.end(), t);
            const std::size_t i = static_cast<std::size_t>(it - times.begin());
            const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
            return (1.0 - w) * values[i - 1] + w * values[i];
        };
        d.name = "custom_table";
        return d;
    }

    /// Shape check plus a Lipschitz spot check on pseudo-random pairs.
    void check(Eigen::Index n, double T, std::uint64_t seed = 12345) const {
        if (state_dim != n) throw DimensionError("diffusion state dimension does not match the system");
        if (!fn) throw DomainError("diffusion has no coefficient function");
        const NormalStream z(seed, 0xD1FFu);
        std::uint64_t idx = 0;
        for (int trial = 0; trial < 64; ++trial) {
            const double t = T * NormalStream::to_unit(static_cast<std::uint32_t>(trial), 7u);
            Vector x(n), y(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                x(i) = 3.0 * z(idx++);
                y(i) = 3.0 * z(idx++);
            }
            const Matrix dx = fn(t, x), dy = fn(t, y);
            if (dx.rows() != n || dx.cols() != noise_dim) throw DimensionError("diffusion returned a matrix of the wrong shape");
            const double lhs = op_norm(Matrix(dx - dy));
            const double rhs = lipschitz_const * (x - y).norm();
            if (lhs > rhs * (1.0 + 1e-9) + 1e-14)
                throw DomainError("diffusion violates its Lipschitz constant " + std::to_string(lipschitz_const));
        }
    }
};

/// Brownian increments and (optionally) simulated states on a uniform grid.
struct PathEnsemble {
    int n_paths = 0;
    UniformGrid grid;
    MeshSpec mesh;
    int noise_dim = 1;
    int state_dim = 0;
    std::uint64_t seed = 0;
    std::string scheme = "increments";
    std::vector<double> increments;  // [path][step][component]
    std::vector<double> states;      // [path][node][component], nodes t_0..t_N

    double dW(int p, int k, int c) const {
        return increments[(static_cast<std::size_t>(p) * grid.steps + k) * noise_dim + c];
    }
    Vector increment(int p, int k) const {
        Vector v(noise_dim);
        for (int c = 0; c < noise_dim; ++c) v(c) = dW(p, k, c);
        return v;
    }
    Vector state(int p, int k) const {
        const std::size_t off = (static_cast<std::size_t>(p) * (grid.steps + 1) + k) * state_dim;
        return Eigen::Map<const Vector>(states.data() + off, state_dim);
    }
    void set_state(int p, int k, const Vector& x) {
        const std::size_t off = (static_cast<std::size_t>(p) * (grid.steps + 1) + k) * state_dim;
        Eigen::Map<Vector>(states.data() + off, state_dim) = x;
    }
    void allocate_states(int n) {
        state_dim = n;
        states.assign(static_cast<std::size_t>(n_paths) * (grid.steps + 1) * n, 0.0);
    }
};

inline PathEnsemble sample_brownian(const UniformGrid& grid, const MeshSpec& mesh, int n_paths, int noise_dim,
                                    std::uint64_t seed) {
    if (n_paths < 1) throw DomainError("sample_brownian: n_paths must be >= 1");
    if (noise_dim < 1) throw DomainError("sample_brownian: noise dimension must be >= 1");
    PathEnsemble e;
    e.n_paths = n_paths;
    e.grid = grid;
    e.mesh = mesh;
    e.noise_dim = noise_dim;
    e.seed = seed;
    const std::size_t per_path = static_cast<std::size_t>(grid.steps) * noise_dim;
    e.increments.resize(per_path * n_paths);
    const double sd = std::sqrt(grid.dt);
    parallel_for(static_cast<std::size_t>(n_paths), [&](std::size_t p) {
        const NormalStream z(seed, p);
        double* out = e.increments.data() + p * per_path;
        for (std::size_t i = 0; i < per_path; i += 2) {
            const auto pair = z.pair(i / 2);
            out[i] = sd * pair[0];
            if (i + 1 < per_path) out[i + 1] = sd * pair[1];
        }
    });
    return e;
}

inline PathEnsemble sample_brownian(const SystemSpec& spec, const MeshSpec& mesh, int n_paths, int noise_dim,
                                    std::uint64_t seed) {
    return sample_brownian(UniformGrid::build(mesh, spec.h, spec.T), mesh, n_paths, noise_dim, seed);
}

/// Per-lag noise weights of the mild scheme. The weight for lag m multiplies
/// Delta(t_j, x_j) dW_j in x(t_{j+m}). It is the cell average of P_alpha, rescaled so
/// that its Frobenius second moment equals the exact cell integral of ||P_alpha||_F^2.
class MildKernel {
public:
    MildKernel(const SystemSpec& spec, const MeshSpec& mesh) : tables_(spec, mesh) {
        const auto& g = tables_.grid();
        const auto& P = tables_.kernel_integral_table();
        const int p = tables_.sub_cells(), N = g.steps;
        const double a = spec.alpha, dt = g.dt;
        weights_.resize(static_cast<std::size_t>(N) + 1);
        nodes_.resize(static_cast<std::size_t>(N) + 1);
        cell_sq_.resize(static_cast<std::size_t>(N) + 1, 0.0);
        const DelayedML& ml = tables_.ml();
        for (int m = 1; m <= N; ++m) {
            const Matrix avg = (P[static_cast<std::size_t>(m * p)] - P[static_cast<std::size_t>((m - 1) * p)]) / dt;
            // v runs backward from the cell's right argument m dt - h.
            auto sq = [&](double v) { return ml.perturbed(a, m * dt - spec.h - v).squaredNorm(); };
            ProductRule rule;
            double exact;
            if (m == 1) {
                const double mu = 2.0 * a - 2.0;
                rule.cells = 64;
                rule.grading = 3.0;
                rule.placement = Grading::right;
                exact = product_integrate([&](double v) { return sq(v) * std::pow(dt - v, -mu); }, mu, 0.0, dt, dt,
                                          rule, 0.0);
            } else {
                rule.cells = 32;
                rule.grading = 2.0;
                rule.placement = Grading::both;
                exact = product_integrate(sq, 0.0, 0.0, dt, dt, rule, 0.0);
            }
            cell_sq_[static_cast<std::size_t>(m)] = exact;
            const double avg_sq = avg.squaredNorm() * dt;
            const double c = avg_sq > 0.0 ? std::sqrt(exact / avg_sq) : 1.0;
            weights_[static_cast<std::size_t>(m)] = c * avg;
            nodes_[static_cast<std::size_t>(m)] = ml.perturbed(a, m * dt - spec.h);
        }
    }

    const VocTables& tables() const noexcept { return tables_; }
    const UniformGrid& grid() const noexcept { return tables_.grid(); }
    /// Noise weight for lag m >= 1.
    const Matrix& weight(int m) const { return weights_[static_cast<std::size_t>(m)]; }
    /// P_alpha(m dt - h), the kernel at lag m.
    const Matrix& node(int m) const { return nodes_[static_cast<std::size_t>(m)]; }
    /// Exact integral of ||P_alpha||_F^2 over the lag-m cell.
    double cell_square(int m) const { return cell_sq_[static_cast<std::size_t>(m)]; }

private:
    VocTables tables_;
    std::vector<Matrix> weights_, nodes_;
    std::vector<double> cell_sq_;
};

namespace detail {
inline void check_ensemble(const SystemSpec& spec, const DiffusionSpec& diff, const PathEnsemble& ens) {
    spec.validate();
    spec.require_stochastic_order();
    diff.check(spec.dim(), spec.T);
    if (ens.increments.empty()) throw DomainError("ensemble has no Brownian increments");
    if (ens.noise_dim != diff.noise_dim) throw DimensionError("ensemble noise dimension does not match the diffusion");
    const UniformGrid g = UniformGrid::build(ens.mesh, spec.h, spec.T);
    if (g.steps != ens.grid.steps || g.dt != ens.grid.dt) throw DomainError("ensemble grid does not match the system");
}
}  // namespace detail

/// Mild scheme with a prebuilt kernel: x_k = hom_k + sum_{j<k} W_{k-j} Delta(t_j, x_j) dW_j.
inline PathEnsemble simulate_mild(const SystemSpec& spec, const DiffusionSpec& diff, const PathEnsemble& ens,
                                  const MildKernel& kernel) {
    detail::check_ensemble(spec, diff, ens);
    const auto hom = kernel.tables().homogeneous();
    const int N = ens.grid.steps;
    const Eigen::Index n = spec.dim();
    PathEnsemble out = ens;
    out.scheme = "mild";
    out.allocate_states(static_cast<int>(n));
    parallel_for(static_cast<std::size_t>(ens.n_paths), [&](std::size_t pi) {
        const int p = static_cast<int>(pi);
        std::vector<Vector> g(static_cast<std::size_t>(N), Vector::Zero(n));
        for (int k = 0; k <= N; ++k) {
            Vector x = hom[static_cast<std::size_t>(k)];
            for (int j = 0; j < k; ++j) x.noalias() += kernel.weight(k - j) * g[static_cast<std::size_t>(j)];
            out.set_state(p, k, x);
            if (k < N) g[static_cast<std::size_t>(k)] = diff(ens.grid.t(k), x) * ens.increment(p, k);
        }
    });
    return out;
}

inline PathEnsemble simulate_mild(const SystemSpec& spec, const DiffusionSpec& diff, const PathEnsemble& ens) {
    detail::check_ensemble(spec, diff, ens);
    const MildKernel kernel(spec, ens.mesh);
    return simulate_mild(spec, diff, ens, kernel);
}

/// Explicit fractional Euler scheme for the Volterra form
///   x(t) = phi(0) + I^alpha [A x + B x(. - h)](t) + I^alpha [Delta dW](t),
/// drift by exact product weights on left-node values, noise cell weights matched to
/// the exact second moment of (t - r)^{alpha-1} / Gamma(alpha).
inline PathEnsemble simulate_integral_form(const SystemSpec& spec, const DiffusionSpec& diff, const PathEnsemble& ens) {
    detail::check_ensemble(spec, diff, ens);
    const int N = ens.grid.steps, m = ens.grid.steps_per_delay;
    const double a = spec.alpha, dt = ens.grid.dt;
    const Eigen::Index n = spec.dim();
    std::vector<double> bw(static_cast<std::size_t>(N) + 1, 0.0), cw(static_cast<std::size_t>(N) + 1, 0.0);
    const double ga = std::tgamma(a), ga1 = std::tgamma(a + 1.0);
    for (int l = 1; l <= N; ++l) {
        bw[static_cast<std::size_t>(l)] = (std::pow(l, a) - std::pow(l - 1.0, a)) * std::pow(dt, a) / ga1;
        const double e = 2.0 * a - 1.0;
        cw[static_cast<std::size_t>(l)] =
            std::sqrt((std::pow(l * dt, e) - std::pow((l - 1) * dt, e)) / (e * dt)) / ga;
    }
    const Vector x0 = spec.phi(0.0);
    PathEnsemble out = ens;
    out.scheme = "integral_form";
    out.allocate_states(static_cast<int>(n));
    parallel_for(static_cast<std::size_t>(ens.n_paths), [&](std::size_t pi) {
        const int p = static_cast<int>(pi);
        std::vector<Vector> x(static_cast<std::size_t>(N) + 1), drift(static_cast<std::size_t>(N)),
            g(static_cast<std::size_t>(N));
        for (int k = 0; k <= N; ++k) {
            Vector xk = x0;
            for (int j = 0; j < k; ++j)
                xk.noalias() += bw[static_cast<std::size_t>(k - j)] * drift[static_cast<std::size_t>(j)] +
                                cw[static_cast<std::size_t>(k - j)] * g[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(k)] = xk;
            out.set_state(p, k, xk);
            if (k < N) {
                const Vector xd = k < m ? spec.phi(ens.grid.t(k) - spec.h) : x[static_cast<std::size_t>(k - m)];
                drift[static_cast<std::size_t>(k)] = spec.A * xk + spec.B * xd;
                g[static_cast<std::size_t>(k)] = diff(ens.grid.t(k), xk) * ens.increment(p, k);
            }
        }
    });
    return out;
}

/// integral_0^t ||P_alpha(t - h - r) Delta(r)||_F^2 dr for deterministic Delta.
inline double second_moment_isometry(const SystemSpec& spec, const DiffusionSpec& diff, double t,
                                     const MeshSpec& mesh = {}) {
    spec.validate();
    spec.require_stochastic_order();
    if (!diff.deterministic()) throw DomainError("second_moment_isometry needs a deterministic diffusion");
    if (!(t >= 0.0)) throw DomainError("second_moment_isometry: t must be nonnegative");
    if (t == 0.0 || diff.is_zero()) return 0.0;
    const DelayedML ml(spec);
    const Eigen::Index n = spec.dim();
    const Vector zero = Vector::Zero(n);
    const double a = spec.alpha, mu = 2.0 * a - 2.0;
    auto F = [&](double r) { return Matrix(ml.perturbed(a, t - spec.h - r) * diff(r, zero)).squaredNorm(); };
    double total = 0.0;
    // Pieces between kernel breakpoints r = t - k h; only the last one is singular.
    for (int k = 0;; ++k) {
        const double hi = t - k * spec.h;
        if (hi <= 0.0) break;
        const double lo = std::max(0.0, t - (k + 1) * spec.h);
        ProductRule rule;
        rule.cells = std::max(64, static_cast<int>(std::ceil(mesh.cells_per_unit * (hi - lo))));
        rule.grading = std::max(2.0, mesh.grading_exponent);
        if (k == 0) {
            rule.placement = Grading::right;
            total += product_integrate([&](double r) { return F(r) * std::pow(t - r, -mu); }, mu, lo, hi, t, rule, 0.0);
        } else {
            rule.placement = Grading::both;
            total += product_integrate(F, 0.0, lo, hi, hi, rule, 0.0);
        }
    }
    return total;
}

struct MomentEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
};

/// Monte Carlo E||int_0^t K(t-h-r) Delta(r) dW(r)||^2 at every grid node, for deterministic
/// Delta, using the mild scheme minus the homogeneous solution.
inline std::vector<MomentEstimate> convolution_second_moments(const SystemSpec& spec, const DiffusionSpec& diff,
                                                              const PathEnsemble& ens) {
    if (!diff.deterministic()) throw DomainError("convolution_second_moments: diffusion must be deterministic");
    const MildKernel kernel(spec, ens.mesh);
    const PathEnsemble x = simulate_mild(spec, diff, ens, kernel);
    const auto hom = kernel.tables().homogeneous();
    const int N = ens.grid.steps, P = ens.n_paths;
    std::vector<MomentEstimate> out(static_cast<std::size_t>(N) + 1);
    std::vector<double> buf(static_cast<std::size_t>(P));
    for (int k = 0; k <= N; ++k) {
        for (int p = 0; p < P; ++p) buf[static_cast<std::size_t>(p)] = (x.state(p, k) - hom[static_cast<std::size_t>(k)]).squaredNorm();
        const double m = pairwise_sum(buf) / P;
        for (int p = 0; p < P; ++p) {
            const double d = buf[static_cast<std::size_t>(p)] - m;
            buf[static_cast<std::size_t>(p)] = d * d;
        }
        out[static_cast<std::size_t>(k)] = {m, P > 1 ? std::sqrt(pairwise_sum(buf) / (P - 1) / P) : 0.0};
    }
    return out;
}

struct ContractionReport {
    double gamma_weight = 1.0;
    double lambda_T = 0.0;
    std::vector<double> M_k;
    std::vector<double> M_k_endpoint;  // E^{k+1}(||A|| T^alpha), cross-check of the grid maximum
    double ratio = 0.0;
    bool contraction_ok = true;
    bool gamma_search_failed = false;
};

inline ContractionReport contraction_report(const SystemSpec& spec, const DiffusionSpec& diff) {
    spec.validate();
    spec.require_stochastic_order();
    ContractionReport rep;
    const double a = spec.alpha, na = op_norm(spec.A), nb = op_norm(spec.B), T = spec.T;
    const int nseg = static_cast<int>(std::ceil(T / spec.h - 1e-12));
    MLQuery q;
    q.alpha = a;
    CompensatedSum<double> lam(0.0);
    for (int k = 0; k <= nseg; ++k) {
        q.beta = (k + 1) * a;
        q.delta = k + 1.0;
        double best = 0.0;
        for (int i = 0; i < 1024; ++i) {
            const double t = T * i / 1023.0;
            best = std::max(best, ml3_scalar(q, na * std::pow(t, a)));
        }
        rep.M_k.push_back(best);
        rep.M_k_endpoint.push_back(ml3_scalar(q, na * std::pow(T, a)));
        lam.add(best * best * std::pow(nb, 2.0 * k) * std::pow(T, 2.0 * k));
    }
    rep.lambda_T = std::tgamma(2.0 * a - 1.0) * lam.value();
    const double L2 = diff.lipschitz_const * diff.lipschitz_const;
    if (L2 == 0.0) {
        rep.gamma_weight = 1.0;
        rep.ratio = 0.0;
        rep.contraction_ok = true;
        return rep;
    }
    const double target = 2.0 * L2 * rep.lambda_T;  // need gamma > target
    int e = std::max(0, static_cast<int>(std::floor(std::log2(target))) + 1);
    if (e > 1000) {
        rep.gamma_search_failed = true;
        e = 1000;
    }
    double g = std::ldexp(1.0, e);
    // Guard against rounding in log2 at exact powers of two.
    while (L2 * rep.lambda_T / g >= 0.5) g *= 2.0;
    while (g > 1.0 && L2 * rep.lambda_T / (g / 2.0) < 0.5) g /= 2.0;
    rep.gamma_weight = g;
    rep.ratio = L2 * rep.lambda_T / g;
    rep.contraction_ok = rep.ratio < 1.0;
    return rep;
}

/// sup_k v_k / E_{2 alpha - 1}(gamma t_k^{2 alpha - 1}).
inline double weighted_sup(const std::vector<double>& values, const UniformGrid& grid, double gamma, double alpha) {
    MLQuery q;
    q.alpha = 2.0 * alpha - 1.0;
    q.beta = 1.0;
    q.max_terms = 4096;
    double best = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        const double t = grid.t(static_cast<int>(k));
        const double w = ml3_scalar(q, gamma * std::pow(t, 2.0 * alpha - 1.0));
        best = std::max(best, values[k] / w);
    }
    return best;
}

/// E||x_k - y_k||^2 per node, averaged over paths by pairwise summation.
inline std::vector<double> mean_square_gap(const PathEnsemble& x, const PathEnsemble& y) {
    if (x.n_paths != y.n_paths || x.grid.steps != y.grid.steps || x.state_dim != y.state_dim)
        throw DimensionError("mean_square_gap: ensembles differ in shape");
    const int N = x.grid.steps;
    std::vector<double> out(static_cast<std::size_t>(N) + 1);
    std::vector<double> buf(static_cast<std::size_t>(x.n_paths));
    for (int k = 0; k <= N; ++k) {
        for (int p = 0; p < x.n_paths; ++p) buf[static_cast<std::size_t>(p)] = (x.state(p, k) - y.state(p, k)).squaredNorm();
        out[static_cast<std::size_t>(k)] = pairwise_sum(buf) / x.n_paths;
    }
    return out;
}

struct EnsembleSummary {
    std::vector<double> times;
    std::vector<Vector> mean;
    std::vector<Vector> variance;  // unbiased sample variance per component
};

inline EnsembleSummary summarize(const PathEnsemble& e) {
    EnsembleSummary s;
    if (e.states.empty()) return s;
    const int N = e.grid.steps, n = e.state_dim, P = e.n_paths;
    std::vector<double> buf(static_cast<std::size_t>(P));
    for (int k = 0; k <= N; ++k) {
        Vector mean(n), var(n);
        for (int i = 0; i < n; ++i) {
            for (int p = 0; p < P; ++p) buf[static_cast<std::size_t>(p)] = e.state(p, k)(i);
            const double mu = pairwise_sum(buf) / P;
            for (int p = 0; p < P; ++p) {
                const double d = e.state(p, k)(i) - mu;
                buf[static_cast<std::size_t>(p)] = d * d;
            }
            mean(i) = mu;
            var(i) = P > 1 ? pairwise_sum(buf) / (P - 1) : 0.0;
        }
        s.times.push_back(e.grid.t(k));
        s.mean.push_back(mean);
        s.variance.push_back(var);
    }
    return s;
}

struct PicardWitness {
    std::vector<double> gaps;    // weighted sup of E||x^{(m+1)} - x^{(m)}||^2, m = 0, 1, ...
    std::vector<double> ratios;  // gaps[m+1] / gaps[m]
    double gamma_weight = 1.0;
};

/// Iterates the mild map against frozen increments, starting from the homogeneous path.
inline PicardWitness picard_witness(const SystemSpec& spec, const DiffusionSpec& diff, const PathEnsemble& ens,
                                    int iterations, double gamma_weight) {
    detail::check_ensemble(spec, diff, ens);
    const MildKernel kernel(spec, ens.mesh);
    const auto hom = kernel.tables().homogeneous();
    const int N = ens.grid.steps;
    const Eigen::Index n = spec.dim();
    PathEnsemble cur = ens;
    cur.allocate_states(static_cast<int>(n));
    for (int p = 0; p < ens.n_paths; ++p)
        for (int k = 0; k <= N; ++k) cur.set_state(p, k, hom[static_cast<std::size_t>(k)]);
    PicardWitness w;
    w.gamma_weight = gamma_weight;
    for (int it = 0; it < iterations; ++it) {
        PathEnsemble next = cur;
        parallel_for(static_cast<std::size_t>(ens.n_paths), [&](std::size_t pi) {
            const int p = static_cast<int>(pi);
            std::vector<Vector> g(static_cast<std::size_t>(N));
            for (int j = 0; j < N; ++j) g[static_cast<std::size_t>(j)] = diff(ens.grid.t(j), cur.state(p, j)) * ens.increment(p, j);
            for (int k = 0; k <= N; ++k) {
                Vector x = hom[static_cast<std::size_t>(k)];
                for (int j = 0; j < k; ++j) x.noalias() += kernel.weight(k - j) * g[static_cast<std::size_t>(j)];
                next.set_state(p, k, x);
            }
        });
        w.gaps.push_back(weighted_sup(mean_square_gap(next, cur), ens.grid, gamma_weight, spec.alpha));
        if (w.gaps.size() >= 2) {
            const double prev = w.gaps[w.gaps.size() - 2];
            w.ratios.push_back(prev > 0.0 ? w.gaps.back() / prev : 0.0);
        }
        cur = std::move(next);
    }
    return w;
}

}  // namespace mlsteer
