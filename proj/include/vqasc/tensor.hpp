#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// Every operation that consumes a tensor with requires_grad() records a node
// holding its parents and a local backward closure. backward() collects the
// nodes reachable from a scalar loss into a Tape (ordered by creation id, so
// parents always precede children) and replays it in reverse.
//
// Broadcasting is limited to explicit helpers (add_rowwise, expand_leading);
// all other binary ops require identical shapes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vqasc/errors.hpp"

namespace vqasc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using BackwardFn = std::function<void(const TensorImpl& out, const std::vector<ImplPtr>& inputs)>;

struct GradFn {
    std::vector<ImplPtr> inputs;
    BackwardFn backward;
    const char* name = "";
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::shared_ptr<GradFn> grad_fn;  // null for leaves

    std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::vector<double> values);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    // Direct write access; only valid on leaves (parameters, inputs).
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();
    std::uint64_t node_id() const;

    // Copy of the values as a fresh leaf with no history.
    Tensor detach() const;

    const detail::ImplPtr& impl() const { return impl_; }
    explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

private:
    detail::ImplPtr impl_;
};

// ---------------------------------------------------------------------------
// Gradient mode

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---------------------------------------------------------------------------
// Tape

/// Nodes reachable from a root, in creation order.
class Tape {
public:
    static Tape collect(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<detail::ImplPtr>& nodes() const { return nodes_; }

    // Seeds d(root)/d(root) = 1 and walks nodes in reverse creation order.
    void run_backward(const Tensor& root) const;

private:
    std::vector<detail::ImplPtr> nodes_;
};

/// Accumulates dLoss/dLeaf into every requires_grad leaf reachable from loss.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
/// x * s where s holds a single element.
Tensor scale_by(const Tensor& x, const Tensor& s);
/// x[..., n] + b[n]
Tensor add_rowwise(const Tensor& x, const Tensor& b);

/// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor reciprocal(const Tensor& x);
/// max(x, lo); gradient passes only where x > lo.
Tensor clamp_min(const Tensor& x, double lo);

// ---------------------------------------------------------------------------
// Linear algebra

/// a[..., k] . b[k, n] -> [..., n]; leading axes of a are treated as rows.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[B, m, k] . b[B, k, n] -> [B, m, n]
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);

// ---------------------------------------------------------------------------
// Shape

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
/// [s...] -> [count, s...] with every copy identical.
Tensor expand_leading(const Tensor& x, std::size_t count);
/// Flat gather: out[i] = x.flat[indices[i]], shape [indices.size()].
Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices);
/// Inverse layout of gather: zeros everywhere except out.flat[indices[i]] = x[i].
Tensor scatter(const Tensor& x, const std::vector<std::size_t>& indices, Shape shape);

// ---------------------------------------------------------------------------
// Reductions and normalisation

Tensor sum(const Tensor& x);
/// Arithmetic mean over one axis; the axis is removed.
Tensor mean(const Tensor& x, std::size_t axis);
Tensor softmax_lastaxis(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---------------------------------------------------------------------------
// Estimators

/// Forward value is `hard` exactly; backward routes the upstream gradient to `soft`.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

}  // namespace vqasc
