#include <mlsteer/specfun.hpp>

#include "oracle/ml_series.hpp"
#include "oracle/reference_values.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mlsteer;

namespace {
MLQuery query(double a, double b, double d) {
    MLQuery q;
    q.alpha = a;
    q.beta = b;
    q.delta = d;
    return q;
}
}  // namespace

TEST(Gamma, KnownValues) {
    EXPECT_DOUBLE_EQ(gamma_fn(1.0), 1.0);
    EXPECT_DOUBLE_EQ(gamma_fn(5.0), 24.0);
    EXPECT_NEAR(gamma_fn(0.5), std::sqrt(M_PI), 1e-15);
    EXPECT_NEAR(gamma_fn(1.5), 0.5 * std::sqrt(M_PI), 1e-15);
}

TEST(Gamma, RecurrenceOnGrid) {
    for (double x = 0.1; x <= 20.0; x += 0.05) {
        const double rel = std::abs(gamma_fn(x + 1.0) - x * gamma_fn(x)) / gamma_fn(x + 1.0);
        EXPECT_LE(rel, 1e-12) << "x = " << x;
    }
}

TEST(Gamma, DomainAndOverflow) {
    EXPECT_THROW(gamma_fn(0.0), DomainError);
    EXPECT_THROW(gamma_fn(-1.5), DomainError);
    EXPECT_THROW(gamma_fn(172.0), OverflowError);
    EXPECT_NO_THROW(gamma_fn(171.0));
}

TEST(Gamma, BetaAndPochhammer) {
    EXPECT_NEAR(beta_fn(2.0, 3.0), 1.0 / 12.0, 1e-15);
    EXPECT_NEAR(beta_fn(0.5, 0.5), M_PI, 1e-14);
    EXPECT_NEAR(beta_fn(100.0, 100.0), std::exp(2 * std::lgamma(100.0) - std::lgamma(200.0)), 1e-70);
    EXPECT_DOUBLE_EQ(pochhammer(3.0, 0), 1.0);
    EXPECT_DOUBLE_EQ(pochhammer(1.0, 5), 120.0);
    EXPECT_NEAR(pochhammer(0.5, 4), std::tgamma(4.5) / std::tgamma(0.5), 1e-13);
    EXPECT_THROW(pochhammer(1.0, -1), DomainError);
}

TEST(MittagLeffler, ReducesToExponential) {
    for (double z = -5.0; z <= 5.0; z += 0.25) {
        const double v = ml3_scalar(query(1, 1, 1), z);
        EXPECT_LE(std::abs(v - std::exp(z)) / std::exp(z), 1e-12) << "z = " << z;
    }
}

TEST(MittagLeffler, ZeroArgumentIsLeadingTerm) {
    for (double beta : {0.3, 1.0, 1.75, 4.0}) {
        const auto v = ml3_scalar_eval(query(0.7, beta, 2.0), 0.0);
        EXPECT_EQ(v.value, 1.0 / std::tgamma(beta));
        EXPECT_EQ(v.terms_used, 1);
    }
}

TEST(MittagLeffler, KnownClosedForms) {
    // E_{1/2}(-x) = exp(x^2) erfc(x); E_{2}(-x^2) = cos x; E_{1,2}(z) = (e^z - 1)/z.
    for (double x : {0.1, 0.5, 1.0, 2.0})
        EXPECT_NEAR(ml3_scalar(query(0.5, 1, 1), -x), std::exp(x * x) * std::erfc(x), 1e-13);
    for (double x : {0.3, 1.0, 2.0, 3.0}) EXPECT_NEAR(ml3_scalar(query(2, 1, 1), -x * x), std::cos(x), 1e-13);
    for (double z : {-3.0, -0.5, 0.7, 4.0}) EXPECT_NEAR(ml3_scalar(query(1, 2, 1), z), std::expm1(z) / z, 1e-13);
}

TEST(MittagLeffler, FrozenHighPrecisionValues) {
    for (const auto& c : oracle::kMLCases) {
        const double v = ml3_scalar(query(c.alpha, c.beta, c.delta), c.z);
        EXPECT_LE(std::abs(v - c.value), 1e-12 * std::abs(c.value)) << c.alpha << " " << c.beta << " " << c.delta << " " << c.z;
    }
}

TEST(MittagLeffler, AgreesWithMultiprecisionSeries) {
    std::mt19937_64 rng(20240611);
    std::uniform_real_distribution<double> ua(0.5, 1.5), ub(0.3, 3.0), ud(1.0, 4.0), uz(-6.0, 6.0);
    for (int i = 0; i < 60; ++i) {
        const double a = ua(rng), b = ub(rng), d = std::floor(ud(rng)), z = uz(rng);
        const double ref = oracle::ml_series_50(a, b, d, z);
        const auto v = ml3_scalar_eval(query(a, b, d), z);
        // Alternating series lose accuracy to cancellation when the terms exceed the sum.
        const double scale = std::max(std::abs(ref), ml3_scalar(query(a, b, d), std::abs(z)) * 1e-4);
        EXPECT_LE(std::abs(v.value - ref), 1e-11 * scale) << a << " " << b << " " << d << " " << z;
    }
}

TEST(MittagLeffler, TailBoundIsReported) {
    const auto v = ml3_scalar_eval(query(0.8, 1.2, 2.0), 3.0);
    EXPECT_GT(v.terms_used, 5);
    EXPECT_GE(v.tail_bound, 0.0);
    EXPECT_LE(v.tail_bound, 1e-12 * std::abs(v.value));
}

TEST(MittagLeffler, GuardsAndValidation) {
    EXPECT_THROW(ml3_scalar(query(0.8, 1, 1), 51.0), DomainError);
    EXPECT_THROW(ml3_scalar(query(0.0, 1, 1), 1.0), DomainError);
    EXPECT_THROW(ml3_scalar(query(0.8, -1, 1), 1.0), DomainError);
    EXPECT_THROW(ml3_scalar(query(0.8, 1, 0.5), 1.0), DomainError);
    MLQuery q = query(0.3, 1, 1);
    q.max_terms = 16;
    EXPECT_THROW(ml3_scalar(q, 40.0), ConvergenceError);
}

TEST(MittagLefflerMatrix, DiagonalMatchesScalar) {
    Matrix D = Matrix::Zero(3, 3);
    D.diagonal() << -1.0, 0.5, 2.0;
    const auto q = query(0.75, 1.3, 2.0);
    const auto v = ml3_matrix(q, D);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(v.value(i, i), ml3_scalar(q, D(i, i)), 1e-12 * std::abs(v.value(i, i)));
    EXPECT_NEAR((v.value - Matrix(v.value.diagonal().asDiagonal())).norm(), 0.0, 1e-15);
}

TEST(MittagLefflerMatrix, JordanBlockUsesDerivative) {
    Matrix J(2, 2);
    J << 0.3, 1.0, 0.0, 0.3;
    const auto v = ml3_matrix(query(0.75, 1, 1), J);
    EXPECT_NEAR(v.value(0, 0), oracle::kJordanDiag, 1e-12);
    EXPECT_NEAR(v.value(1, 1), oracle::kJordanDiag, 1e-12);
    EXPECT_NEAR(v.value(0, 1), oracle::kJordanOffDiag, 1e-12);
    EXPECT_EQ(v.value(1, 0), 0.0);
}

TEST(MittagLefflerMatrix, NilpotentTerminatesExactly) {
    Matrix N = Matrix::Zero(3, 3);
    N(0, 1) = 2.0;
    N(1, 2) = 1.0;
    const auto q = query(0.6, 1.0, 1.0);
    const auto v = ml3_matrix(q, N);
    EXPECT_LE(v.terms_used, 3);
    Matrix expect = Matrix::Identity(3, 3) / std::tgamma(1.0) + N / std::tgamma(1.6) + N * N / std::tgamma(2.2);
    EXPECT_NEAR((v.value - expect).norm(), 0.0, 1e-14);
}

TEST(MittagLefflerMatrix, RotationGivesCosSin) {
    // exp of the rotation generator.
    Matrix R(2, 2);
    R << 0.0, 1.2, -1.2, 0.0;
    const auto v = ml3_matrix(query(1, 1, 1), R);
    EXPECT_NEAR(v.value(0, 0), std::cos(1.2), 1e-13);
    EXPECT_NEAR(v.value(0, 1), std::sin(1.2), 1e-13);
    EXPECT_NEAR(v.value(1, 0), -std::sin(1.2), 1e-13);
}

TEST(MittagLefflerMatrix, RejectsBadArguments) {
    EXPECT_THROW(ml3_matrix(query(0.7, 1, 1), Matrix::Ones(2, 3)), DimensionError);
    EXPECT_THROW(ml3_matrix(query(0.7, 1, 1), 60.0 * Matrix::Identity(2, 2)), DomainError);
}
