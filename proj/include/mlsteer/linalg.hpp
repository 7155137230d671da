#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <type_traits>
#include <vector>

namespace mlsteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Spectral (operator 2-) norm.
inline double op_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

inline double op_norm(const Vector& v) { return v.norm(); }

/// Cheap lower estimate of the operator norm: ||M||_F / sqrt(min(rows, cols)).
inline double op_norm_lower(const Matrix& m) {
    const auto k = std::min(m.rows(), m.cols());
    return k == 0 ? 0.0 : m.norm() / std::sqrt(static_cast<double>(k));
}

/// Neumaier-compensated accumulator; works for doubles and Eigen objects.
template <class T>
class CompensatedSum {
public:
    explicit CompensatedSum(T init) : sum_(init), comp_(init - init) {}

    void add(const T& x) {
        T t = sum_ + x;
        if constexpr (std::is_floating_point_v<T>) {
            if (std::abs(sum_) >= std::abs(x))
                comp_ += (sum_ - t) + x;
            else
                comp_ += (x - t) + sum_;
        } else {
            // Elementwise Neumaier update.
            for (Eigen::Index i = 0; i < t.size(); ++i) {
                const double s = sum_.data()[i], xi = x.data()[i], ti = t.data()[i];
                if (std::abs(s) >= std::abs(xi))
                    comp_.data()[i] += (s - ti) + xi;
                else
                    comp_.data()[i] += (xi - ti) + s;
            }
        }
        sum_ = t;
    }

    T value() const { return sum_ + comp_; }

private:
    T sum_;
    T comp_;
};

/// Deterministic pairwise summation of doubles (independent of thread count).
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

inline bool is_square(const Matrix& m) { return m.rows() == m.cols(); }

/// Concrete value type of a scalar or an Eigen expression.
template <class T, class = void>
struct plain_type {
    using type = std::decay_t<T>;
};
template <class T>
struct plain_type<T, std::void_t<typename std::decay_t<T>::PlainObject>> {
    using type = typename std::decay_t<T>::PlainObject;
};
template <class T>
using plain_t = typename plain_type<T>::type;

}  // namespace mlsteer
