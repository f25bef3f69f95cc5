#ifndef DST_TENSOR_HPP
#define DST_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "dst/errors.hpp"

namespace dst {

// Dense row-major n-d array of doubles. The unit of all numerics: weights,
// activations, gradients and masks are all Tensors.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape_);
    Tensor(std::vector<std::size_t> shape_, std::vector<double> values_);
    Tensor(std::initializer_list<std::size_t> shape_, std::vector<double> values_);

    static Tensor zeros(std::vector<std::size_t> shape_);
    static Tensor full(std::vector<std::size_t> shape_, double value);
    static Tensor scalar(double value);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t dim) const { return shape.at(dim); }

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    // 2-d accessors; most kernels index flat offsets directly.
    double& at2(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    Tensor reshaped(std::vector<std::size_t> new_shape) const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

} // namespace dst

#endif // DST_TENSOR_HPP
