#include <mlsteer/delayed_ml.hpp>

#include "oracle/reference_values.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mlsteer;
using mlsteer::test::pair_system;
using mlsteer::test::scalar_system;

TEST(DelayedML, HistoryAndBeforeHistory) {
    const auto s = pair_system(0.75, 0.5, 2.0);
    const DelayedML ml(s);
    EXPECT_TRUE(ml.fundamental(-0.6).isZero(0.0));
    EXPECT_TRUE(ml.fundamental(-0.5).isIdentity(0.0));
    EXPECT_TRUE(ml.fundamental(-0.2).isIdentity(0.0));
    EXPECT_TRUE(ml.fundamental(0.0).isIdentity(1e-15));
    EXPECT_EQ(ml.segment_index(0.0), 0);
    EXPECT_EQ(ml.segment_index(0.25), 1);
    EXPECT_EQ(ml.segment_index(0.5), 1);
    EXPECT_EQ(ml.segment_index(0.5000001), 2);
}

TEST(DelayedML, DelayedExponentialClosedForm) {
    // x' = x(t - 1), x = 1 on [-1, 0]: x = 1 + t on [0, 1], 1 + t + (t - 1)^2 / 2 on [1, 2].
    const DelayedML ml(scalar_system(0.0, 1.0, 1.0, 1.0, 2.0));
    EXPECT_NEAR(ml.fundamental(0.5)(0, 0), 1.5, 1e-14);
    EXPECT_NEAR(ml.fundamental(1.5)(0, 0), 2.625, 1e-14);
    EXPECT_NEAR(ml.fundamental(2.0)(0, 0), 3.5, 1e-14);
}

TEST(DelayedML, ClassicalLimitMatchesMethodOfSteps) {
    const DelayedML ml(scalar_system(0.2, 0.1, 1.0, 1.0, 3.0));
    for (const auto& c : oracle::kClassicalSteps) EXPECT_NEAR(ml.fundamental(c.t)(0, 0), c.value, 1e-12) << "t = " << c.t;
}

TEST(DelayedML, PerturbedMatchesFrozenValues) {
    for (const auto& c : oracle::kPerturbedCases) {
        const DelayedML ml(scalar_system(c.a, c.b, c.alpha, c.h, 4.0));
        const double v = ml.perturbed(c.beta, c.t)(0, 0);
        EXPECT_LE(std::abs(v - c.value), 1e-12 * std::max(1.0, std::abs(c.value))) << "t = " << c.t;
    }
}

TEST(DelayedML, PerturbedVanishesBeforeHistory) {
    const DelayedML ml(scalar_system(0.2, 0.1, 0.75, 1.0, 2.0));
    EXPECT_EQ(ml.perturbed(0.75, -1.0)(0, 0), 0.0);
    EXPECT_EQ(ml.perturbed(0.75, -1.5)(0, 0), 0.0);
    EXPECT_TRUE(ml.perturbed_eval(0.75, -1.0 + 1e-9).near_singular);
}

TEST(DelayedML, DiagonalPairDecouples) {
    SystemSpec s = scalar_system(0.0, 0.0, 0.7, 1.0, 3.0);
    s.A = Matrix::Zero(2, 2);
    s.A.diagonal() << 0.3, -0.4;
    s.B = Matrix::Zero(2, 2);
    s.B.diagonal() << 0.2, 0.5;
    s.C = Matrix::Identity(2, 2);
    s.phi = InitialFunction::constant(Vector::Ones(2));
    const DelayedML ml(s);
    const DelayedML m1(scalar_system(0.3, 0.2, 0.7, 1.0, 3.0)), m2(scalar_system(-0.4, 0.5, 0.7, 1.0, 3.0));
    for (double t : {0.3, 1.0, 1.7, 2.9}) {
        const Matrix X = ml.fundamental(t), P = ml.perturbed(0.7, t);
        EXPECT_NEAR(X(0, 0), m1.fundamental(t)(0, 0), 1e-13);
        EXPECT_NEAR(X(1, 1), m2.fundamental(t)(0, 0), 1e-13);
        EXPECT_NEAR(X(0, 1), 0.0, 1e-15);
        EXPECT_NEAR(P(0, 0), m1.perturbed(0.7, t)(0, 0), 1e-13);
        EXPECT_NEAR(P(1, 1), m2.perturbed(0.7, t)(0, 0), 1e-13);
    }
}

TEST(DelayedML, ContinuousAcrossDelayNodes) {
    const auto s = pair_system(0.6, 0.5, 2.0);
    const DelayedML ml(s);
    for (double node : {0.5, 1.0, 1.5}) {
        const double eps = 1e-9;
        EXPECT_LE((ml.fundamental(node + eps) - ml.fundamental(node - eps)).norm(), 1e-6) << node;
        EXPECT_LE((ml.perturbed(1.6, node + eps) - ml.perturbed(1.6, node - eps)).norm(), 1e-6) << node;
    }
}

TEST(DelayedML, AntiderivativesDifferentiateBack) {
    const auto s = pair_system(0.75, 0.5, 2.0);
    const DelayedML ml(s);
    const double d = 1e-5;
    for (double t : {0.2, 0.7, 1.3, 1.9}) {
        const Matrix dX = (ml.fundamental_antiderivative(t + d) - ml.fundamental_antiderivative(t - d)) / (2 * d);
        EXPECT_LE((dX - ml.fundamental(t)).norm(), 1e-7) << t;
        const Matrix dP = (ml.perturbed(1.75, t + d) - ml.perturbed(1.75, t - d)) / (2 * d);
        EXPECT_LE((dP - ml.perturbed(0.75, t)).norm(), 1e-7) << t;
    }
    EXPECT_LE((ml.fundamental_antiderivative(0.0) - 0.5 * Matrix::Identity(2, 2)).norm(), 1e-14);
}

TEST(DelayedML, CaputoResidualIsSmall) {
    // L1 derivative of X against A X(t) + B X(t - h) on a fine grid.
    const auto s = pair_system(0.75, 0.5, 1.0);
    const DelayedML ml(s);
    const double dt = 1e-3;
    std::vector<Matrix> samples;
    for (int k = 0; k <= 800; ++k) samples.push_back(ml.fundamental(k * dt));
    const Matrix D = caputo_l1_derivative(samples, dt, s.alpha);
    const double t = 800 * dt;
    const Matrix rhs = s.A * ml.fundamental(t) + s.B * ml.fundamental(t - s.h);
    EXPECT_LE((D - rhs).norm(), 5e-3);
}

TEST(DelayedML, L1SchemeIsExactForLinearFunctions) {
    const double a = 0.6, dt = 0.01;
    std::vector<double> f;
    for (int k = 0; k <= 100; ++k) f.push_back(k * dt);
    EXPECT_NEAR(caputo_l1_derivative(f, dt, a), std::pow(1.0, 1 - a) / std::tgamma(2 - a), 1e-12);
    EXPECT_THROW(caputo_l1_derivative(std::vector<double>{1.0, 2.0}, dt, a), DomainError);
}

TEST(DelayedML, MajorantDominatesNorm) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> ut(0.05, 3.0), ua(0.55, 0.95), ub(0.6, 2.0);
    for (int i = 0; i < 100; ++i) {
        auto [A, B] = mlsteer::test::random_permutable(rng, 2, 0.6);
        SystemSpec s = pair_system(ua(rng), 1.0, 3.0);
        s.A = A;
        s.B = B;
        const double t = ut(rng), beta = ub(rng);
        const DelayedML ml(s);
        EXPECT_LE(op_norm(ml.perturbed(beta, t)), ml_norm_majorant(s, beta, t) * (1 + 1e-12) + 1e-14);
    }
}

TEST(DelayedML, StatedBoundHoldsWithoutDelayTerm) {
    // With B = 0 only the k = 0 term survives and both bounds coincide in form.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ut(0.05, 3.0);
    for (int i = 0; i < 20; ++i) {
        SystemSpec s = scalar_system(0.4, 0.0, 0.8, 1.0, 3.0);
        const double t = ut(rng);
        const DelayedML ml(s);
        EXPECT_LE(op_norm(ml.perturbed(1.8, t)), ml_norm_majorant(s, 1.8, t) + 1e-12);
    }
}

TEST(DelayedML, RejectsNonPermutablePair) {
    SystemSpec s = pair_system(0.75, 1.0, 2.0);
    s.B(0, 1) += 0.5;
    try {
        DelayedML ml(s);
        FAIL() << "expected PermutabilityError";
    } catch (const PermutabilityError& e) {
        EXPECT_GT(e.commutator_norm(), 1e-3);
        EXPECT_NE(std::string(e.what()).find("||AB - BA||"), std::string::npos);
    }
}

TEST(DelayedML, FreeFunctionsMatchClass) {
    const auto s = pair_system(0.7, 0.5, 2.0);
    const DelayedML ml(s);
    EXPECT_EQ((delayed_ml_fundamental(s, 1.2).value - ml.fundamental(1.2)).norm(), 0.0);
    EXPECT_EQ((delayed_ml_perturbed(s, 0.7, 1.2).value - ml.perturbed(0.7, 1.2)).norm(), 0.0);
    EXPECT_EQ(delayed_ml_fundamental(s, 1.2).segment_index, 3);
}
