#pragma once

// Gamma, Beta, Pochhammer and the three-parameter Mittag-Leffler function
//
//   E^delta_{alpha,beta}(z) = sum_k (delta)_k z^k / (k! Gamma(k alpha + beta))
//
// for scalar and (small, square) matrix arguments. Series coefficients are
// formed in log space so that no intermediate Gamma value or power overflows.

#include "errors.hpp"
#include "linalg.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mlsteer {

inline constexpr double kGammaOverflowArg = 171.6;

inline double gamma_fn(double x) {
    if (!(x > 0.0)) throw DomainError("gamma_fn: argument must be positive, got " + std::to_string(x));
    if (x > kGammaOverflowArg) throw OverflowError("gamma_fn: argument " + std::to_string(x) + " overflows");
    return std::tgamma(x);
}

inline double beta_fn(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw DomainError("beta_fn: arguments must be positive");
    if (a + b < kGammaOverflowArg) return std::tgamma(a) * std::tgamma(b) / std::tgamma(a + b);
    return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

/// Rising factorial delta (delta+1) ... (delta+k-1).
inline double pochhammer(double delta, int k) {
    if (k < 0) throw DomainError("pochhammer: k must be nonnegative");
    double p = 1.0;
    for (int i = 0; i < k; ++i) {
        p *= delta + i;
        if (!std::isfinite(p)) throw OverflowError("pochhammer: result overflows");
    }
    return p;
}

struct MLQuery {
    double alpha = 1.0;
    double beta = 1.0;
    double delta = 1.0;
    double tolerance = 1e-12;
    int max_terms = 512;

    void validate() const {
        if (!(alpha > 0.0)) throw DomainError("MLQuery: alpha must be positive");
        if (!(beta > 0.0)) throw DomainError("MLQuery: beta must be positive");
        if (!(delta >= 1.0)) throw DomainError("MLQuery: delta must be >= 1");
        if (!(tolerance > 0.0)) throw DomainError("MLQuery: tolerance must be positive");
        if (max_terms < 16) throw DomainError("MLQuery: max_terms must be >= 16");
    }
};

struct MLScalarValue {
    double value = 0.0;
    int terms_used = 0;
    double tail_bound = 0.0;
};

struct MLMatrixValue {
    Matrix value;
    int terms_used = 0;
    double tail_bound = 0.0;
};

inline constexpr double kMLArgumentGuard = 50.0;

namespace detail {

/// log of (delta)_k / (k! Gamma(k alpha + beta)), the k-th series coefficient.
inline double ml_log_coeff(const MLQuery& q, int k) {
    return std::lgamma(q.delta + k) - std::lgamma(q.delta) - std::lgamma(k + 1.0) -
           std::lgamma(k * q.alpha + q.beta);
}

/// Extended-precision coefficient for the scalar series, where alternating sums cancel.
inline long double ml_log_coeff_ext(const MLQuery& q, int k) {
    const long double d = q.delta, a = q.alpha, b = q.beta;
    return std::lgamma(d + k) - std::lgamma(d) - std::lgamma(k + 1.0L) - std::lgamma(k * a + b);
}

/// Ratio |c_{k+1} / c_k| * x, where x is the (nonnegative) argument magnitude.
/// The sequence is nonincreasing in k for delta >= 1, which certifies the tail.
inline double ml_term_ratio(const MLQuery& q, int k, double x) {
    return x * (q.delta + k) / (k + 1.0) *
           std::exp(std::lgamma(k * q.alpha + q.beta) - std::lgamma((k + 1) * q.alpha + q.beta));
}

/// Shared stopping logic. `term_mag(k)` is the majorant magnitude of term k,
/// `sum_mag` the current magnitude of the partial sum, x the majorant argument.
struct SeriesStop {
    int small_run = 0;

    // Returns true (and fills tail) when terms k-1 and k are both negligible and
    // the ratio test certifies the remaining tail.
    bool done(const MLQuery& q, int k, double term_mag, double sum_mag, double x, double& tail) {
        if (term_mag <= q.tolerance * sum_mag)
            ++small_run;
        else
            small_run = 0;
        if (small_run < 2) return false;
        const double rho = ml_term_ratio(q, k + 1, x);
        if (!(rho < 1.0)) return false;
        const double next = term_mag * ml_term_ratio(q, k, x);
        tail = next / (1.0 - rho);
        return tail <= q.tolerance * sum_mag;
    }
};

}  // namespace detail

inline MLScalarValue ml3_scalar_eval(const MLQuery& q, double z) {
    q.validate();
    if (!(std::abs(z) <= kMLArgumentGuard))
        throw DomainError("ml3_scalar: |z| exceeds the argument guard " + std::to_string(kMLArgumentGuard));

    MLScalarValue out;
    if (z == 0.0) {
        out.value = q.beta < kGammaOverflowArg ? 1.0 / gamma_fn(q.beta) : std::exp(-std::lgamma(q.beta));
        out.terms_used = 1;
        return out;
    }
    const long double log_abs_z = std::log(std::abs(static_cast<long double>(z)));
    const long double sign = z < 0.0 ? -1.0L : 1.0L;
    CompensatedSum<long double> sum(0.0L);
    detail::SeriesStop stop;
    long double s = 1.0L;
    for (int k = 0; k < q.max_terms; ++k) {
        const long double mag = std::exp(detail::ml_log_coeff_ext(q, k) + k * log_abs_z);
        if (!std::isfinite(mag)) break;
        sum.add(s * mag);
        s *= sign;
        double tail = 0.0;
        if (k >= 1 && stop.done(q, k, static_cast<double>(mag), static_cast<double>(std::abs(sum.value())), std::abs(z), tail)) {
            out.value = static_cast<double>(sum.value());
            out.terms_used = k + 1;
            out.tail_bound = tail;
            return out;
        }
    }
    throw ConvergenceError("ml3_scalar: series did not converge within max_terms");
}

inline double ml3_scalar(const MLQuery& q, double z) { return ml3_scalar_eval(q, z).value; }

/// Powers of A normalised by ||A||^k so that each stored power has norm <= 1.
/// Immutable after construction; safe to share between threads.
class MatrixPowers {
public:
    MatrixPowers() = default;

    MatrixPowers(const Matrix& a, int max_terms) {
        if (!is_square(a)) throw DimensionError("MatrixPowers: matrix must be square");
        dim_ = a.rows();
        norm_ = op_norm(a);
        powers_.push_back(Matrix::Identity(dim_, dim_));
        if (norm_ == 0.0) return;
        const Matrix scaled = a / norm_;
        for (int k = 1; k < max_terms; ++k) {
            Matrix next = powers_.back() * scaled;
            if (next.isZero(0.0)) break;  // nilpotent: every further power vanishes
            powers_.push_back(std::move(next));
        }
    }

    Eigen::Index dim() const noexcept { return dim_; }
    double norm() const noexcept { return norm_; }
    int stored() const noexcept { return static_cast<int>(powers_.size()); }
    const Matrix& normalized(int k) const { return powers_[static_cast<std::size_t>(k)]; }

private:
    Eigen::Index dim_ = 0;
    double norm_ = 0.0;
    std::vector<Matrix> powers_;
};

/// exp(log_prefactor) * E^delta_{alpha,beta}(scale * A) using cached powers of A.
/// The truncation test runs on the scalar majorant series at scale * ||A||.
inline MLMatrixValue ml3_series(const MatrixPowers& powers, double scale, const MLQuery& q,
                                double log_prefactor = 0.0) {
    const Eigen::Index n = powers.dim();
    MLMatrixValue out;
    const double x = std::abs(scale) * powers.norm();  // majorant argument
    if (x == 0.0) {
        out.value = std::exp(log_prefactor - std::lgamma(q.beta)) * Matrix::Identity(n, n);
        out.terms_used = 1;
        return out;
    }
    const double log_x = std::log(x);
    const double sign = scale < 0.0 ? -1.0 : 1.0;
    CompensatedSum<Matrix> sum(Matrix::Zero(n, n));
    detail::SeriesStop stop;
    double s = 1.0;
    for (int k = 0; k < q.max_terms; ++k) {
        const double mag = std::exp(log_prefactor + detail::ml_log_coeff(q, k) + k * log_x);
        if (!std::isfinite(mag)) break;
        if (k < powers.stored()) sum.add((s * mag) * powers.normalized(k));
        s *= sign;
        if (k >= powers.stored()) {
            // Nilpotent argument: the series is a finite sum.
            out.value = sum.value();
            out.terms_used = k;
            out.tail_bound = 0.0;
            return out;
        }
        double tail = 0.0;
        const double sum_mag = op_norm_lower(sum.value());
        if (k >= 1 && stop.done(q, k, mag, sum_mag, x, tail)) {
            out.value = sum.value();
            out.terms_used = k + 1;
            out.tail_bound = tail;
            return out;
        }
    }
    throw ConvergenceError("ml3_matrix: series did not converge within max_terms");
}

inline MLMatrixValue ml3_matrix(const MLQuery& q, const Matrix& m) {
    q.validate();
    if (!is_square(m)) throw DimensionError("ml3_matrix: argument must be square");
    const MatrixPowers powers(m, q.max_terms);
    if (!(powers.norm() <= kMLArgumentGuard))
        throw DomainError("ml3_matrix: ||M|| exceeds the argument guard " + std::to_string(kMLArgumentGuard));
    return ml3_series(powers, 1.0, q);
}

}  // namespace mlsteer
