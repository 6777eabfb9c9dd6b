#include "lksde/ad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace lksde::ad {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty() || std::find(shape_.begin(), shape_.end(), 0) != shape_.end()) {
        throw ShapeError("tensor", "dimensions must be positive, got " + shape_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || std::find(shape_.begin(), shape_.end(), 0) != shape_.end()) {
        throw ShapeError("tensor", "dimensions must be positive, got " + shape_string(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor", "shape " + shape_string(shape_) + " does not match " +
                                       std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

Tensor Tensor::row(std::initializer_list<double> values) {
    return Tensor({1, values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
    if (shape_.empty()) return 0;
    return shape_.size() >= 2 ? data_.size() / shape_[0] : shape_[0];
}

double Tensor::item() const {
    if (!is_scalar()) throw ShapeError("item", "tensor " + shape_string(shape_) + " is not a scalar");
    return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace lksde::ad
