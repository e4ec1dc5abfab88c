#include "nk/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nk {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

std::vector<int64_t> strides_of(const Shape& shape) {
    std::vector<int64_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        s[i] = s[i + 1] * shape[i + 1];
    }
    return s;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel(shape_)), fill);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

int Tensor::extent(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for " + shape_str(shape_));
    return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) throw std::out_of_range("index rank mismatch");
    int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        const int e = shape_[static_cast<size_t>(axis)];
        if (i < 0 || i >= e) throw std::out_of_range("index out of range");
        off = off * e + i;
        ++axis;
    }
    return off;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != size()) {
        throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

}  // namespace nk
