#ifndef TARO_GRAD_CHECK_HPP
#define TARO_GRAD_CHECK_HPP

#include <cmath>
#include <functional>
#include <string>

#include "taro/tensor.hpp"

namespace taro {

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5)
{
    if (!(h > 0.0)) throw Error("finite_difference: step must be positive");
    Tensor g = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x.data[i];
        probe.data[i] = xi + h;
        const double fp = f(probe);
        probe.data[i] = xi - h;
        const double fm = f(probe);
        probe.data[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw Error("finite_difference: non-finite function value at coordinate " + std::to_string(i));
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(1, |b_i|)
inline double relative_error(const Tensor& a, const Tensor& b)
{
    tensor_ops::require_same_shape(a, b, "relative_error");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]) / std::max(1.0, std::abs(b.data[i])));
    return m;
}

} // namespace taro

#endif // TARO_GRAD_CHECK_HPP
