#pragma once

#include "errors.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mlsteer {

struct MeshSpec {
    double base_step = 1.0 / 64.0;
    double grading_exponent = 2.0;
    double cells_per_unit = 2048.0;  // fine quadrature resolution

    void validate() const {
        if (!(base_step > 0.0)) throw DomainError("MeshSpec: base_step must be positive");
        if (!(grading_exponent >= 1.0)) throw DomainError("MeshSpec: grading_exponent must be >= 1");
        if (!(cells_per_unit >= 16.0)) throw DomainError("MeshSpec: cells_per_unit must be >= 16");
    }

    void validate(double h) const {
        validate();
        if (base_step > h / 8.0 * (1.0 + 1e-12))
            throw DomainError("MeshSpec: base_step " + std::to_string(base_step) + " exceeds h/8; mesh too coarse relative to h");
    }
};

/// Uniform time grid t_k = k dt on [0, T] whose step divides the delay.
struct UniformGrid {
    double dt = 0.0;
    int steps = 0;           // N, so that N dt = T
    int steps_per_delay = 0; // m, so that m dt = h

    double t(int k) const { return k * dt; }

    static UniformGrid build(const MeshSpec& mesh, double h, double T) {
        mesh.validate(h);
        UniformGrid g;
        const double ratio = h / mesh.base_step;
        const long m = std::lround(ratio);
        if (m < 1 || std::abs(ratio - static_cast<double>(m)) > 1e-8 * ratio)
            throw DomainError("mesh step must divide the delay h exactly (h / base_step = " + std::to_string(ratio) + ")");
        g.steps_per_delay = static_cast<int>(m);
        g.dt = h / static_cast<double>(m);
        const double n_real = T / g.dt;
        const long n = std::lround(n_real);
        if (n < 1 || std::abs(n_real - static_cast<double>(n)) > 1e-8 * n_real)
            throw DomainError("mesh step must divide the horizon T exactly (T / step = " + std::to_string(n_real) + ")");
        g.steps = static_cast<int>(n);
        return g;
    }
};

enum class Grading { none, left, right, both };

/// Nodes a = x_0 < ... < x_N = b clustered toward the chosen end(s) as (j/N)^r.
inline std::vector<double> graded_nodes(double a, double b, int cells, double r, Grading g) {
    std::vector<double> x(static_cast<std::size_t>(cells) + 1);
    const double L = b - a;
    for (int j = 0; j <= cells; ++j) {
        const double s = static_cast<double>(j) / cells;
        double y = s;
        switch (g) {
            case Grading::none: break;
            case Grading::left: y = std::pow(s, r); break;
            case Grading::right: y = 1.0 - std::pow(1.0 - s, r); break;
            case Grading::both:
                y = s <= 0.5 ? 0.5 * std::pow(2.0 * s, r) : 1.0 - 0.5 * std::pow(2.0 * (1.0 - s), r);
                break;
        }
        x[static_cast<std::size_t>(j)] = a + L * y;
    }
    x.front() = a;
    x.back() = b;
    return x;
}

}  // namespace mlsteer
