#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A BasicTape records every primitive in execution order. Operands always
// precede the node that consumes them, so backward() is a single reverse
// sweep. Ops are free functions taking the tape; their backward rules are
// closures stored on the node. The scalar type is a template parameter: the
// library trains in float, gradient checks instantiate double.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsic/error.hpp"
#include "hsic/kernels.hpp"
#include "hsic/rng.hpp"
#include "hsic/tensor.hpp"

namespace hsic::ad {

struct Var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

template <class T>
class BasicTape {
public:
    using TensorT = BasicTensor<T>;
    using BackwardFn = std::function<void(BasicTape&, const TensorT& grad_out)>;

    Var constant(TensorT value) { return push(std::move(value), false, nullptr); }
    Var parameter(TensorT value) { return push(std::move(value), true, nullptr); }

    /// Appends an op result. The node needs a gradient iff any input does.
    Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
        bool needs = false;
        for (Var in : inputs) {
            check(in);
            needs = needs || nodes_[in.id].requires_grad;
        }
        return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
    }

    const TensorT& value(Var v) const {
        check(v);
        return nodes_[v.id].value;
    }

    bool requires_grad(Var v) const {
        check(v);
        return nodes_[v.id].requires_grad;
    }

    /// Gradient of the last backward() loss; zeros for nodes it did not reach.
    TensorT grad(Var v) const {
        check(v);
        const Node& n = nodes_[v.id];
        if (n.has_grad) return n.grad;
        return TensorT(n.value.shape());
    }

    /// Zero-initialised gradient buffer, or nullptr when the node is constant.
    T* grad_buffer(Var v) {
        check(v);
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return nullptr;
        if (!n.has_grad) {
            n.grad = TensorT(n.value.shape());
            n.has_grad = true;
        }
        return n.grad.data().data();
    }

    void backward(Var loss) {
        check(loss);
        if (nodes_[loss.id].value.size() != 1) {
            throw ShapeError("backward needs a scalar loss, got shape " +
                             shape_str(nodes_[loss.id].value.shape()));
        }
        for (Node& n : nodes_) {
            n.has_grad = false;
            n.grad = TensorT();
        }
        if (T* g = grad_buffer(loss)) g[0] = T{1};
        for (std::uint32_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.has_grad && n.backward) n.backward(*this, n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorT value;
        TensorT grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    void check(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this tape");
    }

    Var push(TensorT value, bool requires_grad, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;

namespace detail {

inline void require_rank2(const Shape& s, const char* what) {
    if (s.size() != 2) throw ShapeError(std::string(what) + " expects a rank-2 tensor, got " + shape_str(s));
}

inline void require_same(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T, class F>
Var unary_map(BasicTape<T>& tape, Var x, F&& f, std::function<void(BasicTape<T>&, const BasicTensor<T>&)> bw) {
    const auto& xv = tape.value(x);
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return tape.record(std::move(out), {x}, std::move(bw));
}

}  // namespace detail

/// Standard matrix product of a (m×k) and b (k×n).
template <class T>
Var matmul(BasicTape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    detail::require_rank2(av.shape(), "matmul");
    detail::require_rank2(bv.shape(), "matmul");
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(av.shape()) + " · " + shape_str(bv.shape()));
    }
    BasicTensor<T> out({m, n});
    kernels::gemm(kernels::Trans::no, kernels::Trans::no, m, n, k, av.data().data(), bv.data().data(),
                  out.data().data(), false);
    return tape.record(std::move(out), {a, b}, [a, b, m, n, k](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* ga = t.grad_buffer(a)) {
            kernels::gemm(kernels::Trans::no, kernels::Trans::yes, m, k, n, g.data().data(),
                          t.value(b).data().data(), ga, true);
        }
        if (T* gb = t.grad_buffer(b)) {
            kernels::gemm(kernels::Trans::yes, kernels::Trans::no, k, n, m, t.value(a).data().data(),
                          g.data().data(), gb, true);
        }
    });
}

/// Batched fully connected layer: rows of x (batch×in) map to x·Wᵀ + b with
/// W (out×in) and b (out).
template <class T>
Var affine(BasicTape<T>& tape, Var x, Var w, Var b) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    const auto& bv = tape.value(b);
    detail::require_rank2(xv.shape(), "affine input");
    detail::require_rank2(wv.shape(), "affine weight");
    const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    if (wv.dim(1) != in) {
        throw ShapeError("affine: weight " + shape_str(wv.shape()) + " does not accept input " + shape_str(xv.shape()));
    }
    if (bv.size() != out) {
        throw ShapeError("affine: bias " + shape_str(bv.shape()) + " does not match weight rows " + std::to_string(out));
    }
    BasicTensor<T> y({batch, out});
    T* yd = y.data().data();
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < out; ++j) yd[r * out + j] = bv[j];
    }
    kernels::gemm(kernels::Trans::no, kernels::Trans::yes, batch, out, in, xv.data().data(), wv.data().data(), yd, true);
    return tape.record(std::move(y), {x, w, b}, [x, w, b, batch, in, out](BasicTape<T>& t, const BasicTensor<T>& g) {
        const T* gd = g.data().data();
        if (T* gx = t.grad_buffer(x)) {
            kernels::gemm(kernels::Trans::no, kernels::Trans::no, batch, in, out, gd, t.value(w).data().data(), gx, true);
        }
        if (T* gw = t.grad_buffer(w)) {
            kernels::gemm(kernels::Trans::yes, kernels::Trans::no, out, in, batch, gd, t.value(x).data().data(), gw, true);
        }
        if (T* gb = t.grad_buffer(b)) {
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t j = 0; j < out; ++j) gb[j] += gd[r * out + j];
            }
        }
    });
}

template <class T>
Var reshape(BasicTape<T>& tape, Var x, Shape shape) {
    auto out = tape.value(x).reshaped(std::move(shape));
    return tape.record(std::move(out), {x}, [x](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* gx = t.grad_buffer(x)) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
    });
}

/// max(0, x); the subgradient at exactly zero is zero.
template <class T>
Var relu(BasicTape<T>& tape, Var x) {
    return detail::unary_map<T>(
        tape, x, [](T v) { return v > T{0} ? v : T{0}; },
        [x](BasicTape<T>& t, const BasicTensor<T>& g) {
            if (T* gx = t.grad_buffer(x)) {
                const auto& xv = t.value(x);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (xv[i] > T{0}) gx[i] += g[i];
                }
            }
        });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) during training so
/// evaluation is the identity.
template <class T>
Var dropout(BasicTape<T>& tape, Var x, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw InvalidArgument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    const auto& xv = tape.value(x);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    BasicTensor<T> mask(xv.shape());
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mask[i] = rng.uniform_double() < rate ? T{0} : keep_scale;
        out[i] = xv[i] * mask[i];
    }
    return tape.record(std::move(out), {x}, [x, mask = std::move(mask)](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* gx = t.grad_buffer(x)) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        }
    });
}

template <class T>
T stable_sigmoid(T v) {
    if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
    const T e = std::exp(v);
    return e / (T{1} + e);
}

template <class T>
Var sigmoid(BasicTape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(xv[i]);
    BasicTensor<T> saved = out;
    return tape.record(std::move(out), {x}, [x, y = std::move(saved)](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* gx = t.grad_buffer(x)) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
        }
    });
}

/// Row-wise log-softmax over the trailing extent, computed with a max shift.
template <class T>
Var log_softmax(BasicTape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    BasicTensor<T> out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data().data() + r * cols;
        T mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += std::exp(static_cast<double>(row[c] - mx));
        const T lse = mx + static_cast<T>(std::log(acc));
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
    }
    BasicTensor<T> saved = out;
    return tape.record(std::move(out), {x}, [x, rows, cols, y = std::move(saved)](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* gx = t.grad_buffer(x)) {
            for (std::size_t r = 0; r < rows; ++r) {
                double gsum = 0.0;
                for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    gx[i] += g[i] - std::exp(y[i]) * static_cast<T>(gsum);
                }
            }
        }
    });
}

/// Divides each row by its Euclidean norm. A zero row is a degenerate input.
template <class T>
Var l2_normalize(BasicTape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    BasicTensor<T> out(xv.shape());
    std::vector<T> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = xv[r * cols + c];
            ss += v * v;
        }
        if (!(ss > 0.0)) throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " has zero norm");
        norms[r] = static_cast<T>(std::sqrt(ss));
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] / norms[r];
    }
    BasicTensor<T> saved = out;
    return tape.record(std::move(out), {x},
                       [x, rows, cols, y = std::move(saved), norms = std::move(norms)](BasicTape<T>& t, const BasicTensor<T>& g) {
                           if (T* gx = t.grad_buffer(x)) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double dot = 0.0;
                                   for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(y[r * cols + c]) * g[r * cols + c];
                                   for (std::size_t c = 0; c < cols; ++c) {
                                       const std::size_t i = r * cols + c;
                                       gx[i] += (g[i] - y[i] * static_cast<T>(dot)) / norms[r];
                                   }
                               }
                           }
                       });
}

template <class T>
Var add(BasicTape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    detail::require_same(av.shape(), bv.shape(), "add");
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
        for (Var v : {a, b}) {
            if (T* gv = t.grad_buffer(v)) {
                for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
            }
        }
    });
}

template <class T>
Var sub(BasicTape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    detail::require_same(av.shape(), bv.shape(), "sub");
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* ga = t.grad_buffer(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (T* gb = t.grad_buffer(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

/// Element-wise product.
template <class T>
Var mul(BasicTape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    detail::require_same(av.shape(), bv.shape(), "mul");
    BasicTensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* ga = t.grad_buffer(a)) {
            const auto& bv = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (T* gb = t.grad_buffer(b)) {
            const auto& av = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <class T>
Var scale(BasicTape<T>& tape, Var x, T factor) {
    return detail::unary_map<T>(
        tape, x, [factor](T v) { return v * factor; },
        [x, factor](BasicTape<T>& t, const BasicTensor<T>& g) {
            if (T* gx = t.grad_buffer(x)) {
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
            }
        });
}

/// Scalar sum; accumulated in double.
template <class T>
Var sum(BasicTape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    double acc = 0.0;
    for (T v : xv.data()) acc += v;
    return tape.record(BasicTensor<T>::scalar(static_cast<T>(acc)), {x}, [x](BasicTape<T>& t, const BasicTensor<T>& g) {
        if (T* gx = t.grad_buffer(x)) {
            const std::size_t n = t.value(x).size();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        }
    });
}

template <class T>
Var mean(BasicTape<T>& tape, Var x) {
    const auto n = tape.value(x).size();
    return scale(tape, sum(tape, x), static_cast<T>(1.0 / static_cast<double>(n)));
}

}  // namespace hsic::ad
