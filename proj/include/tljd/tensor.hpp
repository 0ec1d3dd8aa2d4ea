#pragma once

#include "tljd/errors.hpp"

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

namespace tljd {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0)
            os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_volume(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor of 64-bit floats.
///
/// Every primitive in the library works on rank-2 views: a rank-1 tensor of
/// length n behaves as a 1 x n row.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape))
    {
        check_shape(shape_);
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        check_shape(shape_);
        if (shape_volume(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    {
        return Tensor({rows, cols}, std::move(data));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
    {
        return Tensor({rows, cols}, fill);
    }
    static Tensor row(std::vector<double> data)
    {
        const std::size_t n = data.size();
        return Tensor({1, n}, std::move(data));
    }
    static Tensor column(std::vector<double> data)
    {
        const std::size_t n = data.size();
        return Tensor({n, 1}, std::move(data));
    }
    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }

    [[nodiscard]] std::size_t rows() const
    {
        if (shape_.size() == 1)
            return 1;
        require_rank2();
        return shape_[0];
    }
    [[nodiscard]] std::size_t cols() const
    {
        if (shape_.size() == 1)
            return shape_[0];
        require_rank2();
        return shape_[1];
    }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_fast() + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_fast() + c]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    [[nodiscard]] double item() const
    {
        if (data_.size() != 1)
            throw ShapeError("item() requires a single-element tensor, got " + shape_to_string(shape_));
        return data_[0];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] bool all_finite() const noexcept
    {
        for (double v : data_)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    static void check_shape(const Shape& shape)
    {
        if (shape.empty())
            throw ShapeError("tensor shape must have at least one dimension");
        for (std::size_t dim : shape)
            if (dim == 0)
                throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    void require_rank2() const
    {
        if (shape_.size() != 2)
            throw ShapeError("expected a rank-2 tensor, got " + shape_to_string(shape_));
    }
    [[nodiscard]] std::size_t cols_fast() const noexcept { return shape_.size() == 1 ? shape_[0] : shape_[1]; }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}

} // namespace tljd
