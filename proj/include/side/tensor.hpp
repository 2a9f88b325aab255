// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "side/common.hpp"

namespace side {

/// Dense row-major array of doubles. The flat data length always equals the
/// product of the shape extents.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check(data_.size() == numel_of(shape_),
              "tensor data length does not match shape (" + std::to_string(data_.size()) +
                  " vs " + std::to_string(numel_of(shape_)) + ")");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }

    // 2-D accessors; rows()/cols() require rank 2.
    std::size_t rows() const {
        check(rank() == 2, "rows() on non-matrix tensor");
        return shape_[0];
    }
    std::size_t cols() const {
        check(rank() == 2, "cols() on non-matrix tensor");
        return shape_[1];
    }
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    /// Row i of a rank-2 tensor as a span.
    std::span<double> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * shape_[1], shape_[1]};
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return shape.empty() ? 0 : n;
    }

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    check(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sq_norm(std::span<const double> a) { return dot(a, a); }

}  // namespace side
