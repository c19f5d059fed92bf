#include "partaff/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "partaff/error.hpp"

namespace partaff {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (shape_size(shape_) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw DomainError("non-finite value in tensor " + shape_str(shape_));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scratch(Shape shape, std::vector<double> data) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("scratch shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
    t.scratch_ = true;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for " + shape_str(shape_));
    return shape_[axis];
}

bool Tensor::all_finite() const {
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::item() const {
    if (data_->size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ && size() == other.size() &&
           std::memcmp(raw(), other.raw(), size() * sizeof(double)) == 0;
}

}  // namespace partaff
