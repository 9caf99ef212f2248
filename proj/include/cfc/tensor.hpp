#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "cfc/error.hpp"

namespace cfc {

#ifdef CFC_REAL_FLOAT32
using real = float;
#else
using real = double;
#endif

// Row-major shape of rank 0..3. Rank 0 is a scalar (one element). Extents
// must be positive.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<long> dims);
    explicit Shape(std::vector<long> dims);

    int rank() const { return static_cast<int>(dims_.size()); }
    long numel() const;
    long operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
    bool operator==(const Shape& o) const { return dims_ == o.dims_; }
    bool operator!=(const Shape& o) const { return !(*this == o); }
    std::string str() const;  // e.g. "[3x4]"

private:
    std::vector<long> dims_;
};

struct TensorNode {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), real(0));
    }
};

// Value-semantics handle to a shared tensor node. Copies alias the same
// storage; detached_copy() makes an independent, grad-free clone.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor from(std::vector<real> values, Shape shape, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return node_->shape.rank(); }
    long numel() const { return node_->shape.numel(); }

    std::vector<real>& data() { return node_->data; }
    const std::vector<real>& data() const { return node_->data; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    // Gradient accumulator; allocated as zeros on first access.
    std::vector<real>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), real(0));
    }

    real item() const;                       // requires numel() == 1
    real at(long i) const;                   // rank-1 access
    real at(long i, long j) const;           // rank-2 access

    Tensor detached_copy() const;            // same values, no grad history

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode tape. Ops executed under an active TapeScope append their
// backward rules in forward order; backward() replays them reversed, which
// visits every recorded op exactly once in reverse topological order.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = seed and propagates to every requires_grad
    // tensor reachable from loss. A tape can be replayed only once.
    void backward(const Tensor& loss, real seed = real(1));

    std::size_t size() const { return ops_.size(); }
    bool spent() const { return spent_; }
    void record(std::function<void()> op) { ops_.push_back(std::move(op)); }

private:
    std::vector<std::function<void()>> ops_;
    bool spent_ = false;
};

// RAII activation of a tape for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

Tape* active_tape();

// NaN/Inf detection after every forward op. On by default; training keeps it
// on so divergence surfaces at the faulting op.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- ops ----------------------------------------------------------------

// [m x k] x [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // rank-2

// Elementwise. add() also accepts a trailing-dimension broadcast
// ([T x d] + [d]) for bias addition; everything else requires equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Concatenate along axis (rank-1 axis 0, or rank-2 axis 0/1).
Tensor concat(const Tensor& a, const Tensor& b, int axis);

// Rows [start, end) of a rank-2 tensor. Backward scatters into the source.
Tensor slice_rows(const Tensor& x, long start, long end);

// Stack rank-1 tensors of equal width into [N x d].
Tensor stack_rows(const std::vector<Tensor>& rows);

// Same data, new shape (numel preserved).
Tensor reshape(const Tensor& x, Shape shape);

// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

// Inner product of two rank-1 tensors -> scalar.
Tensor dot(const Tensor& u, const Tensor& v);

// Softmax along `axis` with max-subtraction. `mask`, when defined, matches
// x's shape with entries 1 (keep) / 0 (drop); dropped positions get exactly
// zero. A fully masked slice is a DegenerateInputError.
Tensor softmax_masked(const Tensor& x, int axis, const Tensor& mask = Tensor());

// -log softmax(scores)[target] with log-sum-exp stabilization; backward is
// softmax(scores) - onehot(target).
Tensor cross_entropy(const Tensor& scores, long target);

}  // namespace cfc
