#include "partaff/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>

#include "partaff/error.hpp"

namespace partaff {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const Tensor& Var::value() const {
    if (!tape_) throw ValidationError("use of an unbound Var");
    return tape_->value(id_);
}

void Tape::check_owned(const Var& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
        throw ValidationError("Var does not belong to this tape");
    }
}

Var Tape::constant(Tensor value) {
    if (consumed_) throw ValidationError("tape already consumed");
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
    if (consumed_) throw ValidationError("tape already consumed");
    nodes_.push_back(Node{std::move(value), {}, {}, true, true});
    Var v(this, nodes_.size() - 1);
    params_.push_back(v);
    return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (consumed_) throw ValidationError("tape already consumed");
    Node node{std::move(value), {}, std::move(backward), false};
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        check_owned(in);
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (!node.requires_grad) node.backward = nullptr;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::backward(Var loss) {
    if (consumed_) throw ValidationError("tape already consumed");
    check_owned(loss);
    if (loss.value().size() != 1) {
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    consumed_ = true;
    grads_.assign(nodes_.size(), {});
    grads_[loss.id()].assign(1, 1.0);

    std::vector<std::vector<double>*> grad_in;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward || grads_[i].empty()) continue;
        grad_in.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const auto in = node.inputs[k];
            if (!nodes_[in].requires_grad) continue;
            if (grads_[in].empty()) grads_[in].assign(nodes_[in].value.size(), 0.0);
            grad_in[k] = &grads_[in];
        }
        node.backward(grads_[i], grad_in);
        // Interior gradients are no longer needed once propagated.
        if (i != loss.id()) std::vector<double>().swap(grads_[i]);
    }

    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(grad(p));
    return out;
}

Tensor Tape::grad(Var v) const {
    check_owned(v);
    const auto& shape = nodes_[v.id()].value.shape();
    if (grads_.size() <= v.id() || grads_[v.id()].empty()) return Tensor::zeros(shape);
    return Tensor::scratch(shape, grads_[v.id()]);
}

void Tape::note_kink(std::span<const double> inputs) {
    if (!track_kinks_) return;
    std::uint64_t h = kink_hash_;
    for (double x : inputs) {
        h ^= (x > 0.0) ? 0x9Dull : 0x3Bull;
        h *= 0x100000001b3ull;
    }
    kink_hash_ = h;
}

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return Broadcast::Same;
    if (shape_size(b) == 1 && b.size() <= 1) return Broadcast::Scalar;
    if (b.size() == 1 && !a.empty() && a.back() == b[0]) return Broadcast::Row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

inline std::size_t bidx(Broadcast k, std::size_t i, std::size_t cols) {
    switch (k) {
        case Broadcast::Same: return i;
        case Broadcast::Row: return i % cols;
        case Broadcast::Scalar: return 0;
    }
    return 0;
}

// Calls f(i, j) for every output element i and its right-operand index j,
// with the broadcast kind hoisted out of the loop.
template <class F>
inline void for_broadcast(Broadcast k, std::size_t n, std::size_t cols, F f) {
    switch (k) {
        case Broadcast::Same:
            for (std::size_t i = 0; i < n; ++i) f(i, i);
            break;
        case Broadcast::Row:
            for (std::size_t r = 0; r < n; r += cols) {
                for (std::size_t c = 0; c < cols; ++c) f(r + c, c);
            }
            break;
        case Broadcast::Scalar:
            for (std::size_t i = 0; i < n; ++i) f(i, 0);
            break;
    }
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
    std::vector<double> out(a.size());
    const double* x = a.raw();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return Tensor(a.shape(), std::move(out));
}

// Unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
    Tensor y = map_unary(a.value(), f);
    Tensor x = a.value();
    Tensor yc = y;
    return a.tape()->record(std::move(y), {a},
                            [x, yc, dfdx](std::span<const double> g, std::span<std::vector<double>*> gi) {
                                auto& ga = *gi[0];
                                const double* xv = x.raw();
                                const double* yv = yc.raw();
                                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
                            });
}

Tape* same_tape(const Var& a, const Var& b) {
    if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
        throw ValidationError("operands recorded on different tapes");
    }
    return a.tape();
}

std::pair<std::size_t, std::size_t> as_matrix(const Shape& s, const char* op) {
    if (s.size() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(s));
    return {s[0], s[1]};
}

}  // namespace

Var add(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const auto kind = broadcast_kind(a.shape(), b.shape(), "add");
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t cols = a.shape().empty() ? 1 : a.shape().back();
    std::vector<double> out(av.size());
    {
        const double* x = av.raw();
        const double* y = bv.raw();
        for_broadcast(kind, out.size(), cols, [&](std::size_t i, std::size_t j) { out[i] = x[i] + y[j]; });
    }
    return tape->record(Tensor(av.shape(), std::move(out)), {a, b},
                        [kind, cols](std::span<const double> g, std::span<std::vector<double>*> gi) {
                            if (gi[0]) {
                                for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                            }
                            if (gi[1]) {
                                double* gb = gi[1]->data();
                                for_broadcast(kind, g.size(), cols, [&](std::size_t i, std::size_t j) { gb[j] += g[i]; });
                            }
                        });
}

Var sub(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const auto kind = broadcast_kind(a.shape(), b.shape(), "sub");
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t cols = a.shape().empty() ? 1 : a.shape().back();
    std::vector<double> out(av.size());
    {
        const double* x = av.raw();
        const double* y = bv.raw();
        for_broadcast(kind, out.size(), cols, [&](std::size_t i, std::size_t j) { out[i] = x[i] - y[j]; });
    }
    return tape->record(Tensor(av.shape(), std::move(out)), {a, b},
                        [kind, cols](std::span<const double> g, std::span<std::vector<double>*> gi) {
                            if (gi[0]) {
                                for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                            }
                            if (gi[1]) {
                                double* gb = gi[1]->data();
                                for_broadcast(kind, g.size(), cols, [&](std::size_t i, std::size_t j) { gb[j] -= g[i]; });
                            }
                        });
}

Var mul(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const auto kind = broadcast_kind(a.shape(), b.shape(), "mul");
    Tensor av = a.value();
    Tensor bv = b.value();
    const std::size_t cols = av.shape().empty() ? 1 : av.shape().back();
    std::vector<double> out(av.size());
    {
        const double* x = av.raw();
        const double* y = bv.raw();
        for_broadcast(kind, out.size(), cols, [&](std::size_t i, std::size_t j) { out[i] = x[i] * y[j]; });
    }
    return tape->record(Tensor(av.shape(), std::move(out)), {a, b},
                        [kind, cols, av, bv](std::span<const double> g, std::span<std::vector<double>*> gi) {
                            if (gi[0]) {
                                double* ga = gi[0]->data();
                                const double* y = bv.raw();
                                for_broadcast(kind, g.size(), cols, [&](std::size_t i, std::size_t j) { ga[i] += g[i] * y[j]; });
                            }
                            if (gi[1]) {
                                double* gb = gi[1]->data();
                                const double* x = av.raw();
                                for_broadcast(kind, g.size(), cols, [&](std::size_t i, std::size_t j) { gb[j] += g[i] * x[i]; });
                            }
                        });
}

Var scale(Var a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var matmul(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const auto [m, k] = as_matrix(a.shape(), "matmul");
    const auto [k2, n] = as_matrix(b.shape(), "matmul");
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor av = a.value();
    Tensor bv = b.value();
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(av.raw(), m, k) * ConstMap(bv.raw(), k, n);
    return tape->record(Tensor({m, n}, std::move(out)), {a, b},
                        [av, bv, m = m, k = k, n = n](std::span<const double> g, std::span<std::vector<double>*> gi) {
                            ConstMap G(g.data(), m, n);
                            if (gi[0]) MutMap(gi[0]->data(), m, k).noalias() += G * ConstMap(bv.raw(), k, n).transpose();
                            if (gi[1]) MutMap(gi[1]->data(), k, n).noalias() += ConstMap(av.raw(), m, k).transpose() * G;
                        });
}

Var dense(Var x, Var w, Var b, bool apply_relu) {
    Tape* tape = same_tape(x, w);
    same_tape(x, b);
    const auto [m, k] = as_matrix(x.shape(), "dense");
    const auto [k2, n] = as_matrix(w.shape(), "dense");
    if (k != k2 || b.shape() != Shape{n}) {
        throw ShapeError("dense: incompatible shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                         shape_str(b.shape()));
    }
    Tensor xv = x.value();
    Tensor wv = w.value();
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(xv.raw(), m, k) * ConstMap(wv.raw(), k, n);
    const double* bias = b.value().raw();
    for (std::size_t r = 0; r < m * n; r += n) {
        for (std::size_t c = 0; c < n; ++c) out[r + c] += bias[c];
    }
    if (apply_relu) {
        tape->note_kink(out);
        for (auto& v : out) v = v > 0.0 ? v : 0.0;
    }
    Tensor y({m, n}, std::move(out));
    Tensor yc = y;
    return tape->record(
        std::move(y), {x, w, b},
        [xv, wv, yc, apply_relu, m = m, k = k, n = n](std::span<const double> g, std::span<std::vector<double>*> gi) {
            std::vector<double> masked;
            const double* gp = g.data();
            if (apply_relu) {
                masked.resize(g.size());
                const double* yv = yc.raw();
                for (std::size_t i = 0; i < g.size(); ++i) masked[i] = yv[i] > 0.0 ? g[i] : 0.0;
                gp = masked.data();
            }
            ConstMap G(gp, m, n);
            if (gi[0]) MutMap(gi[0]->data(), m, k).noalias() += G * ConstMap(wv.raw(), k, n).transpose();
            if (gi[1]) MutMap(gi[1]->data(), k, n).noalias() += ConstMap(xv.raw(), m, k).transpose() * G;
            if (gi[2]) {
                double* gb = gi[2]->data();
                for (std::size_t r = 0; r < m * n; r += n) {
                    for (std::size_t c = 0; c < n; ++c) gb[c] += gp[r + c];
                }
            }
        });
}

Var relu(Var a) {
    a.tape()->note_kink(a.value().data());
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    for (double x : a.value().data()) {
        if (!(x > 0.0)) throw DomainError("log of non-positive input " + std::to_string(x));
    }
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sin(Var a) {
    return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
    return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return a.tape()->record(Tensor::scalar(s), {a},
                            [](std::span<const double> g, std::span<std::vector<double>*> gi) {
                                for (auto& v : *gi[0]) v += g[0];
                            });
}

Var mean(Var a) {
    const auto n = a.value().size();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var softmax(Var a) {
    const auto& s = a.shape();
    if (s.empty()) throw ShapeError("softmax needs rank >= 1");
    const std::size_t cols = s.back();
    const std::size_t rows = cols ? a.value().size() / cols : 0;
    const double* x = a.value().raw();
    std::vector<double> out(a.value().size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = out.data() + r * cols;
        double mx = xr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (yr[c] = std::exp(xr[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
    }
    Tensor y(s, std::move(out));
    Tensor yc = y;
    return a.tape()->record(std::move(y), {a},
                            [yc, rows, cols](std::span<const double> g, std::span<std::vector<double>*> gi) {
                                auto& ga = *gi[0];
                                for (std::size_t r = 0; r < rows; ++r) {
                                    const double* yr = yc.raw() + r * cols;
                                    const double* gr = g.data() + r * cols;
                                    double dot = 0.0;
                                    for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                                    for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += yr[c] * (gr[c] - dot);
                                }
                            });
}

Var mse(Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tape* tape = same_tape(a, b);
    const auto n = a.value().size();
    if (n == 0) throw ShapeError("mse of empty tensors");
    std::vector<double> diff(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = a.value()[i] - b.value()[i];
        acc += diff[i] * diff[i];
    }
    const double inv = 1.0 / static_cast<double>(n);
    return tape->record(Tensor::scalar(acc * inv), {a, b},
                        [diff = std::move(diff), inv](std::span<const double> g, std::span<std::vector<double>*> gi) {
                            const double c = 2.0 * inv * g[0];
                            if (gi[0]) {
                                for (std::size_t i = 0; i < diff.size(); ++i) (*gi[0])[i] += c * diff[i];
                            }
                            if (gi[1]) {
                                for (std::size_t i = 0; i < diff.size(); ++i) (*gi[1])[i] -= c * diff[i];
                            }
                        });
}

Var reshape(Var a, Shape shape) {
    return a.tape()->record(a.value().reshaped(std::move(shape)), {a},
                            [](std::span<const double> g, std::span<std::vector<double>*> gi) {
                                for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                            });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const auto [rows, cols] = as_matrix(a.shape(), "slice_cols");
    if (begin >= end || end > cols) {
        throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") for " + shape_str(a.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(rows * w);
    const double* x = a.value().raw();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = x[r * cols + begin + c];
    }
    return a.tape()->record(Tensor({rows, w}, std::move(out)), {a},
                            [rows = rows, cols = cols, begin, w](std::span<const double> g,
                                                                 std::span<std::vector<double>*> gi) {
                                auto& ga = *gi[0];
                                for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
                                }
                            });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    Tape* tape = parts[0].tape();
    const std::size_t rows = as_matrix(parts[0].shape(), "concat_cols").first;
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        same_tape(parts[0], p);
        const auto [r, c] = as_matrix(p.shape(), "concat_cols");
        if (r != rows) throw ShapeError("concat_cols: row counts differ");
        widths.push_back(c);
        total += c;
    }
    std::vector<double> out(rows * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* x = parts[k].value().raw();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = x[r * widths[k] + c];
        }
        off += widths[k];
    }
    return tape->record(Tensor({rows, total}, std::move(out)), {parts.begin(), parts.end()},
                        [rows, total, widths](std::span<const double> g, std::span<std::vector<double>*> gi) {
                            std::size_t o = 0;
                            for (std::size_t k = 0; k < widths.size(); ++k) {
                                if (gi[k]) {
                                    for (std::size_t r = 0; r < rows; ++r) {
                                        for (std::size_t c = 0; c < widths[k]; ++c) {
                                            (*gi[k])[r * widths[k] + c] += g[r * total + o + c];
                                        }
                                    }
                                }
                                o += widths[k];
                            }
                        });
}

}  // namespace partaff
