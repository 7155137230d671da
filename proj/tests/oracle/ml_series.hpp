#pragma once

// Test-only oracle: the three-parameter Mittag-Leffler series summed term by term in
// 50-digit arithmetic with explicit Pochhammer products and factorials.

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

namespace mlsteer::oracle {

using Real50 = boost::multiprecision::cpp_bin_float_50;

inline double ml_series_50(double alpha, double beta, double delta, double z) {
    const Real50 a(alpha), b(beta), d(delta), x(z);
    Real50 sum = 0, poch = 1, fact = 1, xk = 1;
    for (int k = 0; k < 5000; ++k) {
        const Real50 term = poch * xk / (fact * boost::math::tgamma(Real50(k) * a + b));
        sum += term;
        if (k > 10 && abs(term) < Real50("1e-45") * (abs(sum) + 1)) break;
        poch *= d + k;
        fact *= k + 1;
        xk *= x;
    }
    return static_cast<double>(sum);
}

}  // namespace mlsteer::oracle
