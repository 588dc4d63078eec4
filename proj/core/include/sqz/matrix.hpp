#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sqz/error.hpp"

namespace sqz {

/// Dense row-major matrix. Storage is float (the on-disk precision);
/// distance and reduction kernels accumulate in double.
template <typename T>
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    T* row(std::size_t i) { return data_.data() + i * cols_; }
    const T* row(std::size_t i) const { return data_.data() + i * cols_; }
    std::span<const T> row_span(std::size_t i) const { return {row(i), cols_}; }
    std::span<T> row_span(std::size_t i) { return {row(i), cols_}; }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    bool operator==(const Mat&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using MatF = Mat<float>;
using MatD = Mat<double>;

/// Squared L2 distance with 64-bit accumulation over 32-bit inputs.
inline double squared_l2(const float* a, const float* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += diff * diff;
    }
    return acc;
}

inline double squared_l2(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ValidationError("squared_l2: dimension mismatch");
    return squared_l2(a.data(), b.data(), a.size());
}

inline double squared_norm(std::span<const float> a) {
    double acc = 0.0;
    for (float v : a) acc += static_cast<double>(v) * static_cast<double>(v);
    return acc;
}

} // namespace sqz
