#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace partaff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Immutable dense row-major tensor of doubles. Copies share storage.
///
/// Construction rejects NaN/Inf unless the tensor is built through
/// `Tensor::scratch`, which is reserved for intermediate buffers whose
/// finiteness is checked later by the caller.
class Tensor {
public:
    /// Rank-0 tensor holding 0.
    Tensor();
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scratch(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_->size(); }
    bool is_scratch() const noexcept { return scratch_; }
    bool all_finite() const;

    std::span<const double> data() const noexcept { return {data_->data(), data_->size()}; }
    const double* raw() const noexcept { return data_->data(); }
    double operator[](std::size_t i) const { return (*data_)[i]; }
    /// Value of a single-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;
    std::vector<double> to_vector() const { return *data_; }

    /// Exact equality of shape and every stored bit pattern.
    bool bit_equal(const Tensor& other) const;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    bool scratch_ = false;
};

}  // namespace partaff
