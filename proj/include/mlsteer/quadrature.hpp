#pragma once

// Product integration for weakly singular Volterra kernels: the weight (s - r)^mu is
// integrated exactly over every cell, the regular factor is sampled at the cell midpoint.

#include "errors.hpp"
#include "linalg.hpp"
#include "mesh.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <utility>
#include <vector>

namespace mlsteer {

struct ProductRule {
    int cells = 256;
    double grading = 2.0;
    Grading placement = Grading::right;
};

/// Exact integral of (s - r)^mu over [r0, r1], s >= r1, mu > -1.
inline double power_weight(double s, double r0, double r1, double mu) {
    const double e = mu + 1.0;
    return (std::pow(s - r0, e) - std::pow(s - r1, e)) / e;
}

/// Integral over [a, b] of (s - r)^mu G(r), where `regular(r)` returns G(r). s >= b.
template <class F, class Zero>
Zero product_integrate(F&& regular, double mu, double a, double b, double s, const ProductRule& rule, Zero zero) {
    if (!(mu > -1.0)) throw DomainError("product_integrate: weight exponent must exceed -1");
    if (rule.cells < 4) throw DomainError("product_integrate: mesh too coarse (fewer than 4 cells)");
    if (!(b >= a)) throw DomainError("product_integrate: empty or reversed interval");
    if (!(s >= b)) throw DomainError("product_integrate: singular point must not lie inside the interval");
    CompensatedSum<Zero> sum(zero);
    if (b == a) return sum.value();
    const auto x = graded_nodes(a, b, rule.cells, rule.grading, rule.placement);
    for (std::size_t j = 0; j + 1 < x.size(); ++j) {
        const double w = mu == 0.0 ? x[j + 1] - x[j] : power_weight(s, x[j], x[j + 1], mu);
        if (w == 0.0) continue;
        sum.add(Zero(w * regular(0.5 * (x[j] + x[j + 1]))));
    }
    return sum.value();
}

/// integral_a^b kernel(r) density(r) dr for a kernel with leading factor (b - r)^mu,
/// mu = alpha - 1 in the typical use. The kernel is divided by (b - r)^mu at the
/// midpoint of each cell, so kernel(r) itself may be singular at r = b.
template <class Kernel, class Density>
auto singular_conv_quadrature(Kernel&& kernel, Density&& density, double a, double b, double mu, const MeshSpec& mesh)
    -> plain_t<decltype(kernel(a) * density(a))> {
    using R = plain_t<decltype(kernel(a) * density(a))>;
    mesh.validate();
    ProductRule rule;
    rule.cells = std::max(16, static_cast<int>(std::ceil(mesh.cells_per_unit * (b - a))));
    rule.grading = mesh.grading_exponent;
    rule.placement = Grading::right;
    auto reg = [&](double r) { return R(std::pow(b - r, -mu) * (kernel(r) * density(r))); };
    R zero = R(kernel(0.5 * (a + b)) * density(0.5 * (a + b)));
    if constexpr (std::is_arithmetic_v<R>)
        zero = 0.0;
    else
        zero.setZero();
    return product_integrate(reg, mu, a, b, b, rule, zero);
}

}  // namespace mlsteer
