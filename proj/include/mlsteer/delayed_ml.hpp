#pragma once

// Delayed Mittag-Leffler matrix functions for permutable A, B.
//
// Fundamental matrix X(t):
//   0 for t < -h,  I on [-h, 0],  and on ((n-1)h, nh]
//   X(t) = I + sum_{k=0}^{n-1} (t-kh)^{(k+1)a} E^{k+1}_{a,(k+1)a+1}(A (t-kh)^a) B^k (A+B).
//
// Delayed perturbation P_beta(t):
//   0 for t <= -h, otherwise with n = 0 on (-h, 0] and n = ceil(t/h) for t > 0
//   P_beta(t) = sum_{k=0}^{n} (t-(k-1)h)^{ka+beta-1} B^k E^{k+1}_{a,ka+beta}(A (t-(k-1)h)^a).
//
// Since d/du [u^g E^d_{a,g+1}(A u^a)] = u^{g-1} E^d_{a,g}(A u^a), the running integral of
// P_beta from -h is P_{beta+1}, and the running integral of X has the same closed form
// as X with every exponent and second parameter raised by one.

#include "errors.hpp"
#include "linalg.hpp"
#include "specfun.hpp"
#include "system.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mlsteer {

struct DelayedMLEval {
    Matrix value;
    double t = 0.0;
    int segment_index = 0;
    std::vector<double> terms;  // operator norms of the individual segment terms
    bool near_singular = false;
};

struct MLOptions {
    double tolerance = 1e-12;
    int max_terms = 512;
};

/// Immutable evaluator bound to one system; caches the powers of A and B^k.
class DelayedML {
public:
    explicit DelayedML(const SystemSpec& spec, MLOptions opts = {})
        : A_(spec.A), B_(spec.B), h_(spec.h), alpha_(spec.alpha), opts_(opts) {
        spec.validate();
        const Eigen::Index n = A_.rows();
        powers_ = MatrixPowers(A_, opts_.max_terms);
        const int kmax = static_cast<int>(std::ceil(spec.T / h_)) + 4;
        Bk_.push_back(Matrix::Identity(n, n));
        for (int k = 1; k <= kmax; ++k) Bk_.push_back(Bk_.back() * B_);
        for (const auto& b : Bk_) BkAB_.push_back(b * (A_ + B_));
    }

    double h() const noexcept { return h_; }
    double alpha() const noexcept { return alpha_; }
    Eigen::Index dim() const noexcept { return A_.rows(); }

    /// n with (n-1)h < t <= nh for t > 0; 0 on [-h, 0]; -1 left of -h.
    int segment_index(double t) const {
        if (t < -h_) return -1;
        if (t <= 0.0) return 0;
        return static_cast<int>(std::ceil(t / h_));
    }

    DelayedMLEval fundamental_eval(double t) const { return fundamental_family(t, 0); }
    Matrix fundamental(double t) const { return fundamental_family(t, 0).value; }

    /// Running integral of X from -h to t.
    Matrix fundamental_antiderivative(double t) const { return fundamental_family(t, 1).value; }

    DelayedMLEval perturbed_eval(double beta, double t) const {
        if (!(beta > 0.0)) throw DomainError("delayed perturbation: beta must be positive");
        const Eigen::Index n = dim();
        DelayedMLEval out;
        out.t = t;
        if (t <= -h_) {
            out.value = Matrix::Zero(n, n);
            out.segment_index = -1;
            return out;
        }
        const int seg = t <= 0.0 ? 0 : static_cast<int>(std::ceil(t / h_));
        out.segment_index = seg;
        CompensatedSum<Matrix> sum(Matrix::Zero(n, n));
        for (int k = 0; k <= seg; ++k) {
            const double u = t - (k - 1) * h_;
            const double expo = k * alpha_ + beta - 1.0;
            if (!(u > 0.0)) {
                out.terms.push_back(0.0);
                continue;
            }
            if (expo < 0.0 && u <= 1e-6 * h_) out.near_singular = true;
            const Matrix& bk = Bpow(k);
            if (bk.isZero(0.0)) {
                out.terms.push_back(0.0);
                continue;
            }
            const Matrix term = bk * ml_term(u, k + 1.0, k * alpha_ + beta, expo);
            out.terms.push_back(op_norm(term));
            sum.add(term);
        }
        out.value = sum.value();
        return out;
    }

    Matrix perturbed(double beta, double t) const { return perturbed_eval(beta, t).value; }

    /// u^{expo} E^{delta}_{alpha,beta}(A u^alpha) for u > 0.
    Matrix ml_term(double u, double delta, double beta, double expo) const {
        const double scale = std::pow(u, alpha_);
        if (!(scale * powers_.norm() <= kMLArgumentGuard))
            throw DomainError("delayed ML: ||A|| u^alpha exceeds the argument guard at u = " + std::to_string(u));
        MLQuery q;
        q.alpha = alpha_;
        q.beta = beta;
        q.delta = delta;
        q.tolerance = opts_.tolerance;
        q.max_terms = opts_.max_terms;
        return ml3_series(powers_, scale, q, expo * std::log(u)).value;
    }

private:
    // shift = 0 gives X, shift = 1 its running integral from -h.
    DelayedMLEval fundamental_family(double t, int shift) const {
        const Eigen::Index n = dim();
        DelayedMLEval out;
        out.t = t;
        if (t < -h_) {
            out.value = Matrix::Zero(n, n);
            out.segment_index = -1;
            return out;
        }
        const double lead = shift == 0 ? 1.0 : t + h_;
        if (t <= 0.0) {
            out.value = lead * Matrix::Identity(n, n);
            out.segment_index = 0;
            return out;
        }
        const int seg = static_cast<int>(std::ceil(t / h_));
        out.segment_index = seg;
        CompensatedSum<Matrix> sum(lead * Matrix::Identity(n, n));
        for (int k = 0; k < seg; ++k) {
            const double u = t - k * h_;
            const Matrix& w = BkABpow(k);
            if (!(u > 0.0) || w.isZero(0.0)) {
                out.terms.push_back(0.0);
                continue;
            }
            const double expo = (k + 1) * alpha_ + shift;
            const Matrix term = ml_term(u, k + 1.0, expo + 1.0, expo) * w;
            out.terms.push_back(op_norm(term));
            sum.add(term);
        }
        out.value = sum.value();
        return out;
    }

    Matrix Bpow(int k) const {
        if (k < static_cast<int>(Bk_.size())) return Bk_[static_cast<std::size_t>(k)];
        Matrix p = Bk_.back();
        for (int i = static_cast<int>(Bk_.size()) - 1; i < k; ++i) p = p * B_;
        return p;
    }

    Matrix BkABpow(int k) const {
        if (k < static_cast<int>(BkAB_.size())) return BkAB_[static_cast<std::size_t>(k)];
        return Bpow(k) * (A_ + B_);
    }

    Matrix A_, B_;
    double h_, alpha_;
    MLOptions opts_;
    MatrixPowers powers_;
    std::vector<Matrix> Bk_, BkAB_;
};

inline DelayedMLEval delayed_ml_fundamental(const SystemSpec& spec, double t, MLOptions opts = {}) {
    return DelayedML(spec, opts).fundamental_eval(t);
}

inline DelayedMLEval delayed_ml_perturbed(const SystemSpec& spec, double beta, double t, MLOptions opts = {}) {
    return DelayedML(spec, opts).perturbed_eval(beta, t);
}

namespace detail {
inline double scalar_ml(double alpha, double beta, double delta, double z) {
    MLQuery q;
    q.alpha = alpha;
    q.beta = beta;
    q.delta = delta;
    return ml3_scalar(q, z);
}
}  // namespace detail

/// Scalar majorant  sum_{k=0}^{n} t^{k alpha+beta-1} ||B||^k E^{k+1}_{alpha,k alpha+beta}(||A|| t^alpha),
/// n = ceil(t/h), with every shifted argument t-(k-1)h replaced by t.
inline double ml_norm_bound(const SystemSpec& spec, double beta, double t) {
    if (!(t > 0.0)) throw DomainError("ml_norm_bound: t must be positive");
    const double a = spec.alpha, na = op_norm(spec.A), nb = op_norm(spec.B);
    const int seg = static_cast<int>(std::ceil(t / spec.h));
    double s = 0.0;
    for (int k = 0; k <= seg; ++k) {
        if (k > 0 && nb == 0.0) break;
        s += std::pow(t, k * a + beta - 1.0) * std::pow(nb, k) *
             detail::scalar_ml(a, k * a + beta, k + 1.0, na * std::pow(t, a));
    }
    return s;
}

/// Triangle-inequality majorant evaluated at the true shifted arguments
/// u_k = t-(k-1)h; always dominates ||P_beta(t)||.
inline double ml_norm_majorant(const SystemSpec& spec, double beta, double t) {
    if (!(t > -spec.h)) return 0.0;
    const double a = spec.alpha, na = op_norm(spec.A), nb = op_norm(spec.B);
    const int seg = t <= 0.0 ? 0 : static_cast<int>(std::ceil(t / spec.h));
    double s = 0.0;
    for (int k = 0; k <= seg; ++k) {
        if (k > 0 && nb == 0.0) break;
        const double u = t - (k - 1) * spec.h;
        s += std::pow(u, k * a + beta - 1.0) * std::pow(nb, k) *
             detail::scalar_ml(a, k * a + beta, k + 1.0, na * std::pow(u, a));
    }
    return s;
}

/// L1-scheme Caputo derivative at the last of the uniform samples f(0), f(dt), ..., f(N dt).
template <class V>
V caputo_l1_derivative(const std::vector<V>& samples, double dt, double alpha) {
    if (samples.size() < 3) throw DomainError("caputo_l1_derivative: need at least 3 samples");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("caputo_l1_derivative: alpha must lie in (0, 1)");
    if (!(dt > 0.0)) throw DomainError("caputo_l1_derivative: dt must be positive");
    const std::size_t N = samples.size() - 1;
    V acc = samples[0] - samples[0];
    for (std::size_t j = 0; j < N; ++j) {
        const double m = static_cast<double>(N - 1 - j);
        const double b = std::pow(m + 1.0, 1.0 - alpha) - std::pow(m, 1.0 - alpha);
        acc = acc + b * (samples[j + 1] - samples[j]);
    }
    return acc * (std::pow(dt, -alpha) / std::tgamma(2.0 - alpha));
}

}  // namespace mlsteer
