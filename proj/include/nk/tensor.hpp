#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace nk {

// Extents of a dense row-major tensor. Rank 0 = scalar.
using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<int64_t> strides_of(const Shape& shape);

// Dense tensor of 64-bit reals, row-major.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const;
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    int64_t offset(std::initializer_list<int> idx) const;
    double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double max_abs() const;

    Tensor reshaped(Shape shape) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace nk
