#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "partaff/tensor.hpp"

namespace partaff {

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Local-gradient closure. `grad_in[k]` is null when input k does not need
/// a gradient; otherwise it is a zero-initialised accumulator of the input's
/// size that the closure must add into.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_in)>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted; `backward` walks it once in reverse.
/// A tape is single-use: after `backward` it is consumed.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf that receives a gradient in `backward`.
    Var parameter(Tensor value);

    /// Appends a primitive application. Used by the op library.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    /// Runs the reverse pass from a scalar loss. Returns one gradient per
    /// parameter, in registration order (zeros for unreached parameters).
    std::vector<Tensor> backward(Var loss);

    /// Gradient of a leaf after `backward` (zeros when unreached). Interior
    /// gradients are released as the reverse pass moves past them.
    Tensor grad(Var v) const;

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    const std::vector<Var>& parameters() const noexcept { return params_; }

    /// Folds the sign pattern of a kinked primitive's inputs into a running
    /// signature; gradient checks skip perturbations that change it.
    /// Only active after set_kink_tracking(true).
    void note_kink(std::span<const double> inputs);
    void set_kink_tracking(bool on) noexcept { track_kinks_ = on; }
    std::uint64_t kink_signature() const noexcept { return kink_hash_; }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_parameter = false;
    };

    void check_owned(const Var& v) const;

    std::vector<Node> nodes_;
    std::vector<Var> params_;
    std::vector<std::vector<double>> grads_;
    bool consumed_ = false;
    bool track_kinks_ = false;
    std::uint64_t kink_hash_ = 0xcbf29ce484222325ull;
};

// Primitive ops. Binary elementwise ops accept equal shapes, a rank-1 right
// operand matching the left operand's last axis (row broadcast), or a
// single-element right operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
/// x W + b for x [m, k], W [k, n], b [n], optionally followed by relu.
Var dense(Var x, Var w, Var b, bool apply_relu = false);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
/// Throws DomainError on any non-positive input.
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var sum(Var a);
Var mean(Var a);
Var softmax(Var a);
/// mean((a - b)^2) over all elements.
Var mse(Var a, Var b);
Var reshape(Var a, Shape shape);
/// Columns [begin, end) of a rank-2 tensor.
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);

}  // namespace partaff
