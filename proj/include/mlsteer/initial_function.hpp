#pragma once

#include "errors.hpp"
#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mlsteer {

/// Initial history phi on [-h, 0], either a vector polynomial
/// phi(t) = sum_i c_i t^i or a natural cubic spline through (knot, value) pairs.
/// Both representations give phi' in closed form.
class InitialFunction {
public:
    enum class Kind { polynomial, spline };

    InitialFunction() = default;

    static InitialFunction constant(const Vector& c) { return polynomial({c}); }

    static InitialFunction polynomial(std::vector<Vector> coefficients) {
        if (coefficients.empty()) throw DomainError("InitialFunction: polynomial needs at least one coefficient");
        const auto n = coefficients.front().size();
        for (const auto& c : coefficients)
            if (c.size() != n) throw DimensionError("InitialFunction: coefficient vectors differ in length");
        InitialFunction f;
        f.kind_ = Kind::polynomial;
        f.coeffs_ = std::move(coefficients);
        return f;
    }

    /// Natural cubic spline. `values[i]` is phi(knots[i]).
    static InitialFunction spline(std::vector<double> knots, std::vector<Vector> values) {
        if (knots.size() < 2 || knots.size() != values.size())
            throw DomainError("InitialFunction: spline needs >= 2 knots with one value each");
        for (std::size_t i = 1; i < knots.size(); ++i)
            if (!(knots[i] > knots[i - 1])) throw DomainError("InitialFunction: spline knots must increase strictly");
        const auto n = values.front().size();
        for (const auto& v : values)
            if (v.size() != n) throw DimensionError("InitialFunction: spline values differ in length");

        InitialFunction f;
        f.kind_ = Kind::spline;
        f.knots_ = std::move(knots);
        f.values_ = std::move(values);
        f.build_second_derivatives();
        return f;
    }

    Kind kind() const noexcept { return kind_; }
    Eigen::Index dim() const {
        return kind_ == Kind::polynomial ? coeffs_.front().size() : values_.front().size();
    }
    const std::vector<Vector>& coefficients() const noexcept { return coeffs_; }
    const std::vector<double>& knots() const noexcept { return knots_; }
    const std::vector<Vector>& values() const noexcept { return values_; }

    /// Spline knots must cover exactly [-h, 0].
    void check_domain(double h) const {
        if (kind_ != Kind::spline) return;
        const double tol = 1e-12 * std::max(1.0, h);
        if (std::abs(knots_.front() + h) > tol || std::abs(knots_.back()) > tol)
            throw DomainError("InitialFunction: spline knots must span [-h, 0]");
    }

    Vector operator()(double t) const { return kind_ == Kind::polynomial ? poly_eval(t, false) : spline_eval(t, false); }
    Vector derivative(double t) const { return kind_ == Kind::polynomial ? poly_eval(t, true) : spline_eval(t, true); }

private:
    Vector poly_eval(double t, bool deriv) const {
        const auto n = coeffs_.front().size();
        Vector acc = Vector::Zero(n);
        const int deg = static_cast<int>(coeffs_.size()) - 1;
        // Horner on either p or p'.
        if (!deriv) {
            for (int i = deg; i >= 0; --i) acc = acc * t + coeffs_[static_cast<std::size_t>(i)];
        } else {
            for (int i = deg; i >= 1; --i) acc = acc * t + static_cast<double>(i) * coeffs_[static_cast<std::size_t>(i)];
        }
        return acc;
    }

    void build_second_derivatives() {
        const std::size_t m = knots_.size();
        const auto n = values_.front().size();
        second_.assign(m, Vector::Zero(n));
        if (m < 3) return;
        // Thomas algorithm for the natural-spline tridiagonal system.
        std::vector<double> c(m, 0.0);
        std::vector<Vector> d(m, Vector::Zero(n));
        for (std::size_t i = 1; i + 1 < m; ++i) {
            const double hl = knots_[i] - knots_[i - 1];
            const double hr = knots_[i + 1] - knots_[i];
            const Vector rhs = 6.0 * ((values_[i + 1] - values_[i]) / hr - (values_[i] - values_[i - 1]) / hl);
            const double diag = 2.0 * (hl + hr) - (i > 1 ? hl * c[i - 1] : 0.0);
            c[i] = hr / diag;
            d[i] = (rhs - (i > 1 ? Vector(hl * d[i - 1]) : Vector::Zero(n))) / diag;
        }
        for (std::size_t i = m - 2; i >= 1; --i) {
            second_[i] = d[i] - c[i] * second_[i + 1];
            if (i == 1) break;
        }
    }

    Vector spline_eval(double t, bool deriv) const {
        const std::size_t m = knots_.size();
        std::size_t i = static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin());
        i = std::clamp<std::size_t>(i, 1, m - 1);
        const double x0 = knots_[i - 1], x1 = knots_[i], hh = x1 - x0;
        const double a = (x1 - t) / hh, b = (t - x0) / hh;
        const Vector& y0 = values_[i - 1];
        const Vector& y1 = values_[i];
        const Vector& m0 = second_[i - 1];
        const Vector& m1 = second_[i];
        if (!deriv)
            return a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * (hh * hh / 6.0);
        return (y1 - y0) / hh + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * (hh / 6.0);
    }

    Kind kind_ = Kind::polynomial;
    std::vector<Vector> coeffs_;
    std::vector<double> knots_;
    std::vector<Vector> values_;
    std::vector<Vector> second_;
};

}  // namespace mlsteer
