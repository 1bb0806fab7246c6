// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_TENSOR_HPP_
#define TAQDIT_TENSOR_HPP_

#include <taqdit/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace taqdit {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor of doubles.
///
/// Most of the library treats a tensor as a matrix: the last dimension is the
/// channel axis and every leading dimension is folded into rows (tokens).
/// A 1-D tensor is a single row.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_size(shape_) != data_.size())
            throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " elements");
    }

    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : shape_{rows, cols}, data_(rows * cols, fill)
    {
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows)
    {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c)
                throw DimensionError("ragged row list");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor vector(std::vector<double> values)
    {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const noexcept
    {
        const std::size_t c = cols();
        return c == 0 ? 0 : data_.size() / c;
    }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept
    {
        return {data_.data() + r * cols(), cols()};
    }

    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool all_finite() const noexcept
    {
        for (double v : data_)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Dense affine layer y = a W + b with W stored as C_i x C_o.
struct LinearLayer {
    Tensor weight;
    Tensor bias;

    std::size_t in_features() const noexcept { return weight.rows(); }
    std::size_t out_features() const noexcept { return weight.cols(); }
};

namespace detail {

inline void require_matrix(const Tensor& t, const char* name)
{
    if (t.rank() != 2)
        throw DimensionError(std::string(name) + " must be 2-D, got " + shape_string(t.shape()));
}

} // namespace detail

/// a [T x K] times w [K x N]. Each output accumulates over K in ascending order.
inline Tensor matmul(const Tensor& a, const Tensor& w)
{
    detail::require_matrix(a, "matmul lhs");
    detail::require_matrix(w, "matmul rhs");
    if (a.cols() != w.rows())
        throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) +
                             " x " + shape_string(w.shape()));
    const std::size_t t = a.rows(), k = a.cols(), n = w.cols();
    Tensor out(t, n);
    for (std::size_t i = 0; i < t; ++i) {
        double* o = out.data() + i * n;
        const double* ai = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* wp = w.data() + p * n;
            for (std::size_t j = 0; j < n; ++j)
                o[j] += av * wp[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a)
{
    detail::require_matrix(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out.at(j, i) = a.at(i, j);
    return out;
}

/// a^T b without materializing the transpose; accumulates over rows in order.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b)
{
    detail::require_matrix(a, "matmul_tn lhs");
    detail::require_matrix(b, "matmul_tn rhs");
    if (a.rows() != b.rows())
        throw DimensionError("matmul_tn row counts differ: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    const std::size_t t = a.rows(), m = a.cols(), n = b.cols();
    Tensor out(m, n);
    for (std::size_t r = 0; r < t; ++r) {
        const double* ar = a.data() + r * m;
        const double* br = b.data() + r * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ar[i];
            double* o = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j)
                o[j] += av * br[j];
        }
    }
    return out;
}

/// a b^T, i.e. [T x N] times [K x N]^T.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b)
{
    return matmul(a, transpose(b));
}

inline Tensor add(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("add shapes differ: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += b[i];
    return out;
}

inline Tensor subtract(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("subtract shapes differ: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= b[i];
    return out;
}

/// Adds a length-C vector to every row of a [T x C] tensor.
inline Tensor add_row_vector(const Tensor& a, std::span<const double> v)
{
    if (a.cols() != v.size())
        throw DimensionError("row vector of length " + std::to_string(v.size()) +
                             " cannot broadcast over " + shape_string(a.shape()));
    Tensor out = a;
    const std::size_t c = a.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j)
            out[r * c + j] += v[j];
    return out;
}

inline double gelu(double x)
{
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

/// d/dx of x * Phi(x).
inline double gelu_derivative(double x)
{
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
    return cdf + x * pdf;
}

inline Tensor gelu(const Tensor& x)
{
    Tensor out = x;
    for (double& v : out.values())
        v = gelu(v);
    return out;
}

inline Tensor linear_forward(const LinearLayer& layer, const Tensor& a)
{
    if (layer.bias.size() != layer.weight.cols())
        throw DimensionError("bias " + shape_string(layer.bias.shape()) + " does not match weight " +
                             shape_string(layer.weight.shape()));
    return add_row_vector(matmul(a, layer.weight), layer.bias.values());
}

/// Stacks the rows of several tensors with equal channel counts.
inline Tensor concat_rows(std::span<const Tensor> parts)
{
    if (parts.empty())
        return {};
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != c)
            throw DimensionError("concat_rows channel mismatch: " + shape_string(p.shape()));
        total += p.rows();
    }
    Tensor out(total, c);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        std::copy(p.values().begin(), p.values().end(), out.values().begin() + offset);
        offset += p.size();
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count)
{
    if (begin + count > a.rows())
        throw DimensionError("slice_rows out of range");
    const std::size_t c = a.cols();
    Tensor out(count, c);
    std::copy_n(a.data() + begin * c, count * c, out.data());
    return out;
}

inline double mean_squared_error(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("mse shapes differ: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    if (a.empty())
        return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double max_abs_difference(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("shapes differ: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace taqdit

#endif // TAQDIT_TENSOR_HPP_
