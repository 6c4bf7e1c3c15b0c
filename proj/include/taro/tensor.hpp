#ifndef TARO_TENSOR_HPP
#define TARO_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace taro {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. Rank 0 is a scalar.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() : data(1, 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d))
    {
        if (data.size() != shape_size(shape))
            throw Error("tensor: data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor full(const Shape& s, double v) { return Tensor(s, std::vector<double>(shape_size(s), v)); }
    static Tensor zeros(const Shape& s) { return full(s, 0.0); }
    static Tensor ones(const Shape& s) { return full(s, 1.0); }
    static Tensor vector(std::vector<double> v)
    {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v)
    {
        return Tensor({rows, cols}, std::move(v));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }
    bool is_scalar() const { return data.size() == 1 && shape_size(shape) == 1; }

    double item() const
    {
        if (data.size() != 1) throw Error("tensor: item() on tensor of shape " + shape_str(shape));
        return data[0];
    }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool all_finite() const
    {
        return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
    }

    /// Row r of a rank-2 tensor as a rank-1 tensor.
    Tensor row(std::size_t r) const
    {
        const std::size_t c = cols();
        return Tensor::vector(std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(r * c),
                                                  data.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape == b.shape && a.data == b.data; }
};

namespace tensor_ops {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape != b.shape)
        throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

template <class F>
Tensor map(const Tensor& a, F f)
{
    Tensor out = a;
    for (auto& v : out.data) v = f(v);
    return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f, const char* op = "zip")
{
    require_same_shape(a, b, op);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, std::plus<>(), "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, std::minus<>(), "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, std::multiplies<>(), "mul"); }
inline Tensor scale(const Tensor& a, double c)
{
    return map(a, [c](double v) { return c * v; });
}
/// a + c * b
inline Tensor axpy(const Tensor& a, double c, const Tensor& b)
{
    return zip(a, b, [c](double x, double y) { return x + c * y; }, "axpy");
}

inline double dot(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}
inline double sq_norm(const Tensor& a) { return dot(a, a); }
inline double norm(const Tensor& a) { return std::sqrt(sq_norm(a)); }
inline double sum(const Tensor& a) { return std::accumulate(a.data.begin(), a.data.end(), 0.0); }
inline double max_abs(const Tensor& a)
{
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}
inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

/// Stack equally sized rank-1 tensors into a rank-2 tensor.
inline Tensor stack_rows(const std::vector<Tensor>& rows)
{
    if (rows.empty()) throw Error("stack_rows: no rows");
    const std::size_t d = rows.front().size();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.size() != d) throw Error("stack_rows: ragged rows");
        out.insert(out.end(), r.data.begin(), r.data.end());
    }
    return Tensor::matrix(rows.size(), d, std::move(out));
}

} // namespace tensor_ops
} // namespace taro

#endif // TARO_TENSOR_HPP
