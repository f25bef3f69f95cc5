#include "dst/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace dst {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape_)
    : shape(std::move(shape_)), values(shape_numel(shape), 0.0) {
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
    }
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values_)
    : shape(std::move(shape_)), values(std::move(values_)) {
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
}

Tensor::Tensor(std::initializer_list<std::size_t> shape_, std::vector<double> values_)
    : Tensor(std::vector<std::size_t>(shape_), std::move(values_)) {}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) { return Tensor(std::move(shape_)); }

Tensor Tensor::full(std::vector<std::size_t> shape_, double value) {
    Tensor t(std::move(shape_));
    for (double& v : t.values) v = value;
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_numel(new_shape) != values.size()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape) + " to " +
                         shape_to_string(new_shape));
    }
    return Tensor(std::move(new_shape), values);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape) +
                         " vs " + shape_to_string(b.shape));
    }
}

} // namespace dst
