#pragma once

#include "errors.hpp"
#include "initial_function.hpp"
#include "linalg.hpp"

#include <cmath>
#include <string>

namespace mlsteer {

/// The delay system  ^C D^alpha x(t) = A x(t) + B x(t-h) + C u(t) (+ noise),
/// x = phi on [-h, 0], considered on [0, T].
struct SystemSpec {
    Matrix A;
    Matrix B;
    Matrix C;
    double h = 1.0;
    double alpha = 0.75;
    double T = 1.0;
    InitialFunction phi;

    Eigen::Index dim() const { return A.rows(); }

    double commutator_norm() const { return op_norm(Matrix(A * B - B * A)); }
    double commutation_tolerance() const { return 1e-10 * (1.0 + op_norm(A) * op_norm(B)); }

    /// Checks shapes, ranges and AB = BA. Deterministic use admits alpha in (0, 1].
    void validate() const {
        if (A.rows() == 0 || !is_square(A)) throw DimensionError("SystemSpec: A must be square and nonempty");
        if (B.rows() != A.rows() || B.cols() != A.cols()) throw DimensionError("SystemSpec: B must match A");
        if (C.rows() != A.rows() || C.cols() < 1 || C.cols() > A.rows())
            throw DimensionError("SystemSpec: C must be n x m with 1 <= m <= n");
        if (!(h > 0.0)) throw DomainError("SystemSpec: delay h must be positive");
        if (!(T > 0.0)) throw DomainError("SystemSpec: horizon T must be positive");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("SystemSpec: alpha must lie in (0, 1]");
        if (phi.dim() != A.rows()) throw DimensionError("SystemSpec: initial function dimension must match A");
        phi.check_domain(h);
        const double comm = commutator_norm();
        const double tol = commutation_tolerance();
        if (comm > tol) throw PermutabilityError(comm, tol);
    }

    /// Stochastic operations need square integrability of (t-r)^{alpha-1}.
    /// Controllability routines also accept the classical limit alpha = 1.
    void require_stochastic_order(bool allow_classical = false) const {
        const bool ok = alpha > 0.5 && (alpha < 1.0 || (allow_classical && alpha == 1.0));
        if (!ok)
            throw DomainError(std::string("operation requires alpha in (1/2, 1") + (allow_classical ? "]" : ")") +
                              ", got alpha = " + std::to_string(alpha));
    }
};

}  // namespace mlsteer
