#include "cfc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace cfc {

namespace {

thread_local Tape* g_active_tape = nullptr;
bool g_finite_checks = true;

void check_finite(const Tensor& t, const char* op) {
    if (!g_finite_checks) return;
    for (real v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in result");
        }
    }
}

bool taping() { return g_active_tape != nullptr; }

void record(std::function<void()> op) { g_active_tape->record(std::move(op)); }

// Gradient of `node`, or nullptr if nothing downstream seeded it.
std::vector<real>* out_grad(const std::shared_ptr<TensorNode>& node) {
    return node->grad.empty() ? nullptr : &node->grad;
}

}  // namespace

// ---- Shape ----------------------------------------------------------------

Shape::Shape(std::initializer_list<long> dims) : Shape(std::vector<long>(dims)) {}

Shape::Shape(std::vector<long> dims) : dims_(std::move(dims)) {
    if (dims_.size() > 3) {
        throw ShapeError("shape rank " + std::to_string(dims_.size()) + " exceeds 3");
    }
    for (long d : dims_) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + str());
    }
}

long Shape::numel() const {
    long n = 1;
    for (long d : dims_) n *= d;
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->data.assign(static_cast<std::size_t>(shape.numel()), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(std::vector<real> values, Shape shape, bool requires_grad) {
    if (static_cast<long>(values.size()) != shape.numel()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return from({value}, Shape{}, requires_grad);
}

real Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
}

real Tensor::at(long i) const { return node_->data[static_cast<std::size_t>(i)]; }

real Tensor::at(long i, long j) const {
    return node_->data[static_cast<std::size_t>(i * shape()[1] + j)];
}

Tensor Tensor::detached_copy() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = false;
    return Tensor(std::move(node));
}

// ---- Tape -----------------------------------------------------------------

void Tape::backward(const Tensor& loss, real seed) {
    if (spent_) throw TapeStateError("backward called twice on the same tape");
    if (!loss.defined() || loss.numel() != 1) {
        throw TapeStateError("backward requires a scalar loss");
    }
    if (ops_.empty()) throw TapeStateError("backward on an empty tape");
    spent_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] += seed;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

// ---- ops --------------------------------------------------------------

namespace {

Tensor make_output(Shape shape, bool any_input_grad) {
    return Tensor::zeros(std::move(shape), any_input_grad && taping());
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + t.shape().str());
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const long m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner extents differ: " + a.shape().str() + " x " +
                         b.shape().str());
    }
    Tensor out = make_output({m, n}, a.requires_grad() || b.requires_grad());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (long i = 0; i < m; ++i) {
        for (long p = 0; p < k; ++p) {
            const real aip = av[static_cast<std::size_t>(i * k + p)];
            if (aip == real(0)) continue;
            const std::size_t brow = static_cast<std::size_t>(p * n);
            const std::size_t orow = static_cast<std::size_t>(i * n);
            for (long j = 0; j < n; ++j) ov[orow + j] += aip * bv[brow + j];
        }
    }
    check_finite(out, "matmul");
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        record([an, bn, on, m, k, n] {
            const auto* g = out_grad(on);
            if (!g) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (long i = 0; i < m; ++i)
                    for (long p = 0; p < k; ++p) {
                        real acc = 0;
                        for (long j = 0; j < n; ++j)
                            acc += (*g)[static_cast<std::size_t>(i * n + j)] *
                                   bn->data[static_cast<std::size_t>(p * n + j)];
                        an->grad[static_cast<std::size_t>(i * k + p)] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (long p = 0; p < k; ++p)
                    for (long j = 0; j < n; ++j) {
                        real acc = 0;
                        for (long i = 0; i < m; ++i)
                            acc += an->data[static_cast<std::size_t>(i * k + p)] *
                                   (*g)[static_cast<std::size_t>(i * n + j)];
                        bn->grad[static_cast<std::size_t>(p * n + j)] += acc;
                    }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const long m = a.shape()[0], n = a.shape()[1];
    Tensor out = make_output({n, m}, a.requires_grad());
    const auto& av = a.data();
    auto& ov = out.data();
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j)
            ov[static_cast<std::size_t>(j * m + i)] = av[static_cast<std::size_t>(i * n + j)];
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        record([an, on, m, n] {
            const auto* g = out_grad(on);
            if (!g) return;
            an->ensure_grad();
            for (long i = 0; i < m; ++i)
                for (long j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(i * n + j)] +=
                        (*g)[static_cast<std::size_t>(j * m + i)];
        });
    }
    return out;
}

namespace {

// Shared body for same-shape binary ops.
template <class Fwd, class Bwd>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                         Bwd bwd) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(name) + ": shape mismatch: " + a.shape().str() +
                         " vs " + b.shape().str());
    }
    Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    check_finite(out, name);
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        record([an, bn, on, bwd] {
            const auto* g = out_grad(on);
            if (!g) return;
            bwd(*an, *bn, *g);
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    // trailing-dimension broadcast for bias addition: [T x d] + [d]
    if (a.rank() == 2 && b.rank() == 1) {
        const long t = a.shape()[0], d = a.shape()[1];
        if (b.shape()[0] != d) {
            throw ShapeError("add: bias width mismatch: " + a.shape().str() + " + " +
                             b.shape().str());
        }
        Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.data();
        for (long i = 0; i < t; ++i)
            for (long j = 0; j < d; ++j)
                ov[static_cast<std::size_t>(i * d + j)] =
                    av[static_cast<std::size_t>(i * d + j)] + bv[static_cast<std::size_t>(j)];
        check_finite(out, "add");
        if (out.requires_grad()) {
            auto an = a.node(), bn = b.node(), on = out.node();
            record([an, bn, on, t, d] {
                const auto* g = out_grad(on);
                if (!g) return;
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (std::size_t i = 0; i < g->size(); ++i) an->grad[i] += (*g)[i];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (long i = 0; i < t; ++i)
                        for (long j = 0; j < d; ++j)
                            bn->grad[static_cast<std::size_t>(j)] +=
                                (*g)[static_cast<std::size_t>(i * d + j)];
                }
            });
        }
        return out;
    }
    return binary_same_shape(
        a, b, "add", [](real x, real y) { return x + y; },
        [](TensorNode& an, TensorNode& bn, const std::vector<real>& g) {
            if (an.requires_grad) {
                an.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub", [](real x, real y) { return x - y; },
        [](TensorNode& an, TensorNode& bn, const std::vector<real>& g) {
            if (an.requires_grad) {
                an.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul", [](real x, real y) { return x * y; },
        [](TensorNode& an, TensorNode& bn, const std::vector<real>& g) {
            if (an.requires_grad) {
                an.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i] * bn.data[i];
            }
            if (bn.requires_grad) {
                bn.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i] * an.data[i];
            }
        });
}

namespace {

template <class Fwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd,
                std::function<void(TensorNode&, const TensorNode&, const std::vector<real>&)> bwd) {
    Tensor out = make_output(a.shape(), a.requires_grad());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
    check_finite(out, name);
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        record([an, on, bwd = std::move(bwd)] {
            const auto* g = out_grad(on);
            if (!g) return;
            an->ensure_grad();
            bwd(*an, *on, *g);
        });
    }
    return out;
}

}  // namespace

Tensor scale(const Tensor& a, real c) {
    return unary_op(
        a, "scale", [c](real x) { return c * x; },
        [c](TensorNode& an, const TensorNode&, const std::vector<real>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += c * g[i];
        });
}

Tensor add_scalar(const Tensor& a, real c) {
    return unary_op(
        a, "add_scalar", [c](real x) { return x + c; },
        [](TensorNode& an, const TensorNode&, const std::vector<real>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
        });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](real x) { return std::tanh(x); },
        [](TensorNode& an, const TensorNode& on, const std::vector<real>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const real y = on.data[i];
                an.grad[i] += g[i] * (real(1) - y * y);
            }
        });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid",
        [](real x) {
            if (x >= real(0)) return real(1) / (real(1) + std::exp(-x));
            const real e = std::exp(x);
            return e / (real(1) + e);
        },
        [](TensorNode& an, const TensorNode& on, const std::vector<real>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const real y = on.data[i];
                an.grad[i] += g[i] * y * (real(1) - y);
            }
        });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.rank() != b.rank()) {
        throw ShapeError("concat: rank mismatch: " + a.shape().str() + " vs " +
                         b.shape().str());
    }
    if (a.rank() == 1 && axis == 0) {
        const long la = a.shape()[0], lb = b.shape()[0];
        Tensor out = make_output({la + lb}, a.requires_grad() || b.requires_grad());
        auto& ov = out.data();
        std::copy(a.data().begin(), a.data().end(), ov.begin());
        std::copy(b.data().begin(), b.data().end(), ov.begin() + la);
        if (out.requires_grad()) {
            auto an = a.node(), bn = b.node(), on = out.node();
            record([an, bn, on, la, lb] {
                const auto* g = out_grad(on);
                if (!g) return;
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (long i = 0; i < la; ++i) an->grad[i] += (*g)[i];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (long i = 0; i < lb; ++i) bn->grad[i] += (*g)[la + i];
                }
            });
        }
        return out;
    }
    if (a.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ShapeError("concat: unsupported rank/axis for shapes " + a.shape().str() +
                         ", " + b.shape().str());
    }
    const long ra = a.shape()[0], ca = a.shape()[1];
    const long rb = b.shape()[0], cb = b.shape()[1];
    const int other = 1 - axis;
    if (a.shape()[other] != b.shape()[other]) {
        throw ShapeError("concat: mismatch on non-concat axis: " + a.shape().str() +
                         " vs " + b.shape().str());
    }
    const long rows = axis == 0 ? ra + rb : ra;
    const long cols = axis == 1 ? ca + cb : ca;
    Tensor out = make_output({rows, cols}, a.requires_grad() || b.requires_grad());
    auto& ov = out.data();
    const auto& av = a.data();
    const auto& bv = b.data();
    if (axis == 0) {
        std::copy(av.begin(), av.end(), ov.begin());
        std::copy(bv.begin(), bv.end(), ov.begin() + ra * ca);
    } else {
        for (long i = 0; i < rows; ++i) {
            std::copy(av.begin() + i * ca, av.begin() + (i + 1) * ca, ov.begin() + i * cols);
            std::copy(bv.begin() + i * cb, bv.begin() + (i + 1) * cb,
                      ov.begin() + i * cols + ca);
        }
    }
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        record([an, bn, on, axis, ra, ca, rb, cb, cols] {
            const auto* g = out_grad(on);
            if (!g) return;
            if (an->requires_grad) {
                an->ensure_grad();
                if (axis == 0) {
                    for (long i = 0; i < ra * ca; ++i) an->grad[i] += (*g)[i];
                } else {
                    for (long i = 0; i < ra; ++i)
                        for (long j = 0; j < ca; ++j)
                            an->grad[static_cast<std::size_t>(i * ca + j)] +=
                                (*g)[static_cast<std::size_t>(i * cols + j)];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (axis == 0) {
                    const long off = ra * ca;
                    for (long i = 0; i < rb * cb; ++i) bn->grad[i] += (*g)[off + i];
                } else {
                    for (long i = 0; i < ra; ++i)
                        for (long j = 0; j < cb; ++j)
                            bn->grad[static_cast<std::size_t>(i * cb + j)] +=
                                (*g)[static_cast<std::size_t>(i * cols + ca + j)];
                }
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, long start, long end) {
    require_rank(x, 2, "slice_rows");
    const long t = x.shape()[0], d = x.shape()[1];
    if (start < 0 || start >= end || end > t) {
        throw SpanError("slice_rows: invalid span [" + std::to_string(start) + ", " +
                        std::to_string(end) + ") for " + std::to_string(t) + " rows");
    }
    Tensor out = make_output({end - start, d}, x.requires_grad());
    std::copy(x.data().begin() + start * d, x.data().begin() + end * d, out.data().begin());
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        record([xn, on, start, d] {
            const auto* g = out_grad(on);
            if (!g) return;
            xn->ensure_grad();
            const std::size_t off = static_cast<std::size_t>(start * d);
            for (std::size_t i = 0; i < g->size(); ++i) xn->grad[off + i] += (*g)[i];
        });
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw DegenerateInputError("stack_rows: empty row list");
    const long d = rows.front().shape()[0];
    bool any_grad = false;
    for (const Tensor& r : rows) {
        require_rank(r, 1, "stack_rows");
        if (r.shape()[0] != d) {
            throw ShapeError("stack_rows: width mismatch: " + rows.front().shape().str() +
                             " vs " + r.shape().str());
        }
        any_grad = any_grad || r.requires_grad();
    }
    const long n = static_cast<long>(rows.size());
    Tensor out = make_output({n, d}, any_grad);
    auto& ov = out.data();
    for (long i = 0; i < n; ++i)
        std::copy(rows[static_cast<std::size_t>(i)].data().begin(),
                  rows[static_cast<std::size_t>(i)].data().end(), ov.begin() + i * d);
    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorNode>> nodes;
        nodes.reserve(rows.size());
        for (const Tensor& r : rows) nodes.push_back(r.node());
        auto on = out.node();
        record([nodes = std::move(nodes), on, d] {
            const auto* g = out_grad(on);
            if (!g) return;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (!nodes[i]->requires_grad) continue;
                nodes[i]->ensure_grad();
                const std::size_t off = i * static_cast<std::size_t>(d);
                for (long j = 0; j < d; ++j) nodes[i]->grad[j] += (*g)[off + j];
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape.numel() != x.numel()) {
        throw ShapeError("reshape: numel mismatch: " + x.shape().str() + " -> " +
                         shape.str());
    }
    Tensor out = make_output(shape, x.requires_grad());
    out.data() = x.data();
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        record([xn, on] {
            const auto* g = out_grad(on);
            if (!g) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < g->size(); ++i) xn->grad[i] += (*g)[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = make_output(Shape{}, x.requires_grad());
    real acc = 0;
    for (real v : x.data()) acc += v;
    out.data()[0] = acc;
    check_finite(out, "sum");
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        record([xn, on] {
            const auto* g = out_grad(on);
            if (!g) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += (*g)[0];
        });
    }
    return out;
}

Tensor dot(const Tensor& u, const Tensor& v) {
    require_rank(u, 1, "dot");
    require_rank(v, 1, "dot");
    if (u.shape() != v.shape()) {
        throw ShapeError("dot: length mismatch: " + u.shape().str() + " vs " +
                         v.shape().str());
    }
    Tensor out = make_output(Shape{}, u.requires_grad() || v.requires_grad());
    real acc = 0;
    for (std::size_t i = 0; i < u.data().size(); ++i) acc += u.data()[i] * v.data()[i];
    out.data()[0] = acc;
    check_finite(out, "dot");
    if (out.requires_grad()) {
        auto un = u.node(), vn = v.node(), on = out.node();
        record([un, vn, on] {
            const auto* g = out_grad(on);
            if (!g) return;
            const real gv = (*g)[0];
            if (un->requires_grad) {
                un->ensure_grad();
                for (std::size_t i = 0; i < un->grad.size(); ++i)
                    un->grad[i] += gv * vn->data[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t i = 0; i < vn->grad.size(); ++i)
                    vn->grad[i] += gv * un->data[i];
            }
        });
    }
    return out;
}

namespace {

struct AxisWalk {
    long slices;       // number of slices along the axis
    long len;          // extent of the axis
    long stride;       // element stride along the axis
    // base offset of slice s
    long base(long s) const {
        // decompose s into (outer, inner) parts around the axis
        return (s / inner) * (len * inner) + (s % inner);
    }
    long inner;
};

AxisWalk axis_walk(const Shape& shape, int axis) {
    if (axis < 0 || axis >= shape.rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape.str());
    }
    AxisWalk w{};
    w.len = shape[axis];
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < shape.rank(); ++i) inner *= shape[i];
    w.slices = outer * inner;
    w.stride = inner;
    w.inner = inner;
    return w;
}

}  // namespace

Tensor softmax_masked(const Tensor& x, int axis, const Tensor& mask) {
    if (x.rank() == 0) throw ShapeError("softmax_masked: scalar input");
    if (mask.defined() && mask.shape() != x.shape()) {
        throw ShapeError("softmax_masked: mask shape " + mask.shape().str() +
                         " does not match input " + x.shape().str());
    }
    const AxisWalk w = axis_walk(x.shape(), axis);
    Tensor out = make_output(x.shape(), x.requires_grad());
    const auto& xv = x.data();
    const real* mv = mask.defined() ? mask.data().data() : nullptr;
    auto& ov = out.data();
    for (long s = 0; s < w.slices; ++s) {
        const long base = w.base(s);
        real mx = 0;
        bool any = false;
        for (long i = 0; i < w.len; ++i) {
            const long idx = base + i * w.stride;
            if (mv && mv[idx] == real(0)) continue;
            if (!any || xv[static_cast<std::size_t>(idx)] > mx)
                mx = xv[static_cast<std::size_t>(idx)];
            any = true;
        }
        if (!any) throw DegenerateInputError("softmax_masked: fully masked slice");
        real denom = 0;
        for (long i = 0; i < w.len; ++i) {
            const long idx = base + i * w.stride;
            if (mv && mv[idx] == real(0)) {
                ov[static_cast<std::size_t>(idx)] = real(0);
                continue;
            }
            const real e = std::exp(xv[static_cast<std::size_t>(idx)] - mx);
            ov[static_cast<std::size_t>(idx)] = e;
            denom += e;
        }
        for (long i = 0; i < w.len; ++i) {
            const long idx = base + i * w.stride;
            if (mv && mv[idx] == real(0)) continue;
            ov[static_cast<std::size_t>(idx)] /= denom;
        }
    }
    check_finite(out, "softmax_masked");
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        auto mn = mask.defined() ? mask.node() : nullptr;
        record([xn, on, mn, w] {
            const auto* g = out_grad(on);
            if (!g) return;
            xn->ensure_grad();
            const real* m = mn ? mn->data.data() : nullptr;
            for (long s = 0; s < w.slices; ++s) {
                const long base = w.base(s);
                real inner_sum = 0;
                for (long i = 0; i < w.len; ++i) {
                    const long idx = base + i * w.stride;
                    if (m && m[idx] == real(0)) continue;
                    inner_sum += (*g)[static_cast<std::size_t>(idx)] *
                                 on->data[static_cast<std::size_t>(idx)];
                }
                for (long i = 0; i < w.len; ++i) {
                    const long idx = base + i * w.stride;
                    if (m && m[idx] == real(0)) continue;
                    const real y = on->data[static_cast<std::size_t>(idx)];
                    xn->grad[static_cast<std::size_t>(idx)] +=
                        y * ((*g)[static_cast<std::size_t>(idx)] - inner_sum);
                }
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& scores, long target) {
    require_rank(scores, 1, "cross_entropy");
    const long n = scores.shape()[0];
    if (target < 0 || target >= n) {
        throw LabelError("cross_entropy: target " + std::to_string(target) +
                         " out of range for " + std::to_string(n) + " classes");
    }
    Tensor out = make_output(Shape{}, scores.requires_grad());
    const auto& sv = scores.data();
    real mx = sv[0];
    for (real v : sv) mx = std::max(mx, v);
    real denom = 0;
    for (real v : sv) denom += std::exp(v - mx);
    const real lse = mx + std::log(denom);
    out.data()[0] = lse - sv[static_cast<std::size_t>(target)];
    check_finite(out, "cross_entropy");
    if (out.requires_grad()) {
        auto sn = scores.node(), on = out.node();
        record([sn, on, target, lse, n] {
            const auto* g = out_grad(on);
            if (!g) return;
            sn->ensure_grad();
            const real gv = (*g)[0];
            for (long j = 0; j < n; ++j) {
                const real p = std::exp(sn->data[static_cast<std::size_t>(j)] - lse);
                sn->grad[static_cast<std::size_t>(j)] +=
                    gv * (p - (j == target ? real(1) : real(0)));
            }
        });
    }
    return out;
}

}  // namespace cfc
