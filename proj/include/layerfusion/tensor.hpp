#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layerfusion/errors.hpp"

namespace layerfusion {

/// Spatial (height, width) of a token grid or image.
struct Shape2 {
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t area() const noexcept { return height * width; }
    friend bool operator==(const Shape2&, const Shape2&) = default;
};

inline std::string to_string(const Shape2& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense row-major float32 array. Every dimension is positive; a rank-0
/// tensor holds exactly one element.
class Tensor {
public:
    Tensor() : data_(1, 0.0f) {}

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_count(dims_), 0.0f) {}

    Tensor(std::vector<std::size_t> dims, std::vector<float> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (checked_count(dims_) != data_.size())
            throw ArgumentError("tensor data length " + std::to_string(data_.size()) +
                                " does not match dims product " +
                                std::to_string(checked_count(dims_)));
    }

    static Tensor filled(std::vector<std::size_t> dims, float value) {
        Tensor t(std::move(dims));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(float value) { return Tensor({}, {value}); }

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t dim(std::size_t axis) const {
        if (axis >= dims_.size())
            throw ArgumentError("axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(dims_.size()));
        return dims_[axis];
    }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    const std::vector<float>& vec() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    const float& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Element of a rank-2 tensor.
    float& at(std::size_t r, std::size_t c) noexcept { return data_[r * dims_[1] + c]; }
    const float& at(std::size_t r, std::size_t c) const noexcept { return data_[r * dims_[1] + c]; }

    /// Element of a rank-3 tensor.
    float& at(std::size_t a, std::size_t b, std::size_t c) noexcept {
        return data_[(a * dims_[1] + b) * dims_[2] + c];
    }
    const float& at(std::size_t a, std::size_t b, std::size_t c) const noexcept {
        return data_[(a * dims_[1] + b) * dims_[2] + c];
    }

    /// Row `r` of a rank-2 tensor.
    std::span<float> row(std::size_t r) noexcept {
        return std::span<float>(data_).subspan(r * dims_[1], dims_[1]);
    }
    std::span<const float> row(std::size_t r) const noexcept {
        return std::span<const float>(data_).subspan(r * dims_[1], dims_[1]);
    }

    Tensor reshaped(std::vector<std::size_t> dims) const {
        return Tensor(std::move(dims), data_);
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    float min() const { return *std::min_element(data_.begin(), data_.end()); }
    float max() const { return *std::max_element(data_.begin(), data_.end()); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t checked_count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw ArgumentError("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* name) {
    if (t.rank() != rank)
        throw ArgumentError(std::string(name) + " must have rank " + std::to_string(rank) +
                            ", got " + shape_string(t.dims()));
}

/// Row-major product of [M x K] and [K x N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ArgumentError("matmul inner dimension mismatch: " + shape_string(a.dims()) +
                            " x " + shape_string(b.dims()));
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        float* o = &out.at(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const float av = a.at(i, p);
            const float* br = &b.at(p, 0);
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
    return out;
}

/// Adds a length-N bias to every row of an [M x N] tensor in place.
inline void add_row_bias(Tensor& x, const Tensor& bias) {
    const std::size_t n = x.dim(1);
    if (bias.size() != n) throw ArgumentError("bias length does not match row width");
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < n; ++j) x.at(i, j) += bias[j];
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims())
        throw ArgumentError("elementwise add shape mismatch: " + shape_string(a.dims()) + " vs " +
                            shape_string(b.dims()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

/// Stacks rank-2 tensors with equal column counts along rows.
inline Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
    require_rank(top, 2, "concat_rows top");
    require_rank(bottom, 2, "concat_rows bottom");
    if (top.dim(1) != bottom.dim(1)) throw ArgumentError("concat_rows column mismatch");
    std::vector<float> data(top.vec());
    data.insert(data.end(), bottom.vec().begin(), bottom.vec().end());
    return Tensor({top.dim(0) + bottom.dim(0), top.dim(1)}, std::move(data));
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_rows input");
    if (begin + count > x.dim(0) || count == 0) throw ArgumentError("slice_rows out of range");
    const std::size_t w = x.dim(1);
    std::vector<float> data(x.vec().begin() + static_cast<std::ptrdiff_t>(begin * w),
                            x.vec().begin() + static_cast<std::ptrdiff_t>((begin + count) * w));
    return Tensor({count, w}, std::move(data));
}

}  // namespace layerfusion
