#include "vqasc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace vqasc {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

using detail::ImplPtr;
using detail::TensorImpl;

ImplPtr new_impl(Shape shape, std::vector<double> data)
{
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return impl;
}

// Records an op result. The grad_fn is attached only when some input needs a
// gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<ImplPtr> inputs,
                   detail::BackwardFn fn, const char* name)
{
    auto impl = new_impl(std::move(shape), std::move(data));
    if (t_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const ImplPtr& p) { return p->requires_grad; });
        if (any) {
            impl->requires_grad = true;
            impl->grad_fn = std::make_shared<detail::GradFn>(
                detail::GradFn{std::move(inputs), std::move(fn), name});
        }
    }
    return Tensor(std::move(impl));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
}

void require_defined(const Tensor& t, const char* op)
{
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// C[m x n] += A[m x k] . B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += A[m x n] . B[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T . B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<std::size_t> strides_of(const Shape& shape)
{
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::size_t numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& detail::TensorImpl::ensure_grad()
{
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
{
    for (auto s : shape) {
        if (s == 0) throw DimensionError("tensor shape must be positive: " + to_string(shape));
    }
    if (vqasc::numel(shape) != values.size()) {
        throw DimensionError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + to_string(shape));
    }
    impl_ = new_impl(std::move(shape), std::move(values));
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    const auto n = vqasc::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value)
{
    const auto n = vqasc::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

const Shape& Tensor::shape() const
{
    require_defined(*this, "shape");
    return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range");
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const
{
    require_defined(*this, "data");
    return impl_->data;
}

std::span<double> Tensor::mutable_data()
{
    require_defined(*this, "mutable_data");
    if (impl_->grad_fn) throw ContractError("mutable_data on a non-leaf tensor");
    return impl_->data;
}

double Tensor::item() const
{
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on)
{
    require_defined(*this, "set_requires_grad");
    if (impl_->grad_fn) throw ContractError("set_requires_grad on a non-leaf tensor");
    impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const
{
    require_defined(*this, "grad");
    if (!has_grad()) throw ContractError("tensor has no accumulated gradient");
    return impl_->grad;
}

void Tensor::zero_grad()
{
    if (impl_) impl_->grad.clear();
}

std::uint64_t Tensor::node_id() const { return impl_ ? impl_->id : 0; }

Tensor Tensor::detach() const
{
    require_defined(*this, "detach");
    return Tensor(new_impl(impl_->shape, impl_->data));
}

// ---------------------------------------------------------------------------
// Grad mode and tape

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tape Tape::collect(const Tensor& root)
{
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const TensorImpl*> seen;
    std::vector<ImplPtr> stack{root.impl()};
    seen.insert(root.impl().get());
    while (!stack.empty()) {
        ImplPtr node = std::move(stack.back());
        stack.pop_back();
        if (node->grad_fn) {
            for (const auto& in : node->grad_fn->inputs) {
                if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
            }
        }
        tape.nodes_.push_back(std::move(node));
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const ImplPtr& a, const ImplPtr& b) { return a->id < b->id; });
    return tape;
}

void Tape::run_backward(const Tensor& root) const
{
    // Interior gradients are recomputed from scratch on every pass so that
    // only leaves accumulate across calls.
    for (const auto& node : nodes_) {
        if (node->grad_fn) node->grad.clear();
    }
    root.impl()->ensure_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        const auto& node = *it;
        if (!node->grad_fn || node->grad.size() != node->data.size()) continue;
        node->grad_fn->backward(*node, node->grad_fn->inputs);
    }
}

void backward(const Tensor& loss)
{
    require_defined(loss, "backward");
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape");
    Tape::collect(loss).run_backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           for (const auto& p : in) {
                               if (!p->requires_grad) continue;
                               auto& g = p->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                           }
                       },
                       "add");
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           if (in[0]->requires_grad) {
                               auto& g = in[0]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                           }
                           if (in[1]->requires_grad) {
                               auto& g = in[1]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                           }
                       },
                       "sub");
}

Tensor hadamard(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "hadamard");
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return make_result(a.shape(), std::move(out), {a.impl(), b.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           const auto& a = *in[0];
                           const auto& b = *in[1];
                           if (a.requires_grad) {
                               auto& g = in[0]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * b.data[i];
                           }
                           if (b.requires_grad) {
                               auto& g = in[1]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * a.data[i];
                           }
                       },
                       "hadamard");
}

Tensor scale(const Tensor& x, double factor)
{
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= factor;
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [factor](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                       },
                       "scale");
}

Tensor add_scalar(const Tensor& x, double offset)
{
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += offset;
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       },
                       "add_scalar");
}

Tensor scale_by(const Tensor& x, const Tensor& s)
{
    if (s.numel() != 1) throw DimensionError("scale_by: factor must have one element, got " + to_string(s.shape()));
    const double f = s.item();
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= f;
    return make_result(x.shape(), std::move(out), {x.impl(), s.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           const double f = in[1]->data[0];
                           if (in[0]->requires_grad) {
                               auto& g = in[0]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * f;
                           }
                           if (in[1]->requires_grad) {
                               double acc = 0.0;
                               for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * in[0]->data[i];
                               in[1]->ensure_grad()[0] += acc;
                           }
                       },
                       "scale_by");
}

Tensor add_rowwise(const Tensor& x, const Tensor& b)
{
    if (x.rank() < 1 || b.rank() != 1 || x.shape().back() != b.dim(0)) {
        throw DimensionError("add_rowwise: " + to_string(x.shape()) + " + " + to_string(b.shape()));
    }
    const std::size_t n = b.dim(0);
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % n];
    return make_result(x.shape(), std::move(out), {x.impl(), b.impl()},
                       [n](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           if (in[0]->requires_grad) {
                               auto& g = in[0]->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                           }
                           if (in[1]->requires_grad) {
                               auto& g = in[1]->ensure_grad();
                               for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % n] += o.grad[i];
                           }
                       },
                       "add_rowwise");
}

Tensor gelu(const Tensor& x)
{
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xd[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           const auto& xs = in[0]->data;
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const double v = xs[i];
                               const double u = kGeluC * (v + kGeluA * v * v * v);
                               const double t = std::tanh(u);
                               const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                               const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                               g[i] += o.grad[i] * d;
                           }
                       },
                       "gelu");
}

Tensor log(const Tensor& x)
{
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xd[i]);
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / in[0]->data[i];
                       },
                       "log");
}

Tensor reciprocal(const Tensor& x)
{
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / xd[i];
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i] * o.data[i] * o.data[i];
                       },
                       "reciprocal");
}

Tensor sqrt(const Tensor& x)
{
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(xd[i]);
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * 0.5 / o.data[i];
                       },
                       "sqrt");
}

Tensor clamp_min(const Tensor& x, double lo)
{
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xd[i], lo);
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [lo](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               if (in[0]->data[i] > lo) g[i] += o.grad[i];
                           }
                       },
                       "clamp_min");
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions differ: " + to_string(a.shape()) + " . " +
                             to_string(b.shape()));
    }
    const std::size_t k = b.dim(0);
    const std::size_t n = b.dim(1);
    const std::size_t m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result(std::move(out_shape), std::move(out), {a.impl(), b.impl()},
                       [m, k, n](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           if (in[0]->requires_grad) {
                               gemm_nt(o.grad.data(), in[1]->data.data(), in[0]->ensure_grad().data(), m, n, k);
                           }
                           if (in[1]->requires_grad) {
                               gemm_tn(in[0]->data.data(), o.grad.data(), in[1]->ensure_grad().data(), m, k, n);
                           }
                       },
                       "matmul");
}

Tensor bmm(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: incompatible shapes " + to_string(a.shape()) + " . " +
                             to_string(b.shape()));
    }
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<double> out(batch * m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
        gemm_nn(ad + s * m * k, bd + s * k * n, out.data() + s * m * n, m, k, n);
    }
    return make_result({batch, m, n}, std::move(out), {a.impl(), b.impl()},
                       [batch, m, k, n](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           const double* og = o.grad.data();
                           if (in[0]->requires_grad) {
                               double* ga = in[0]->ensure_grad().data();
                               const double* bd = in[1]->data.data();
                               for (std::size_t s = 0; s < batch; ++s) {
                                   gemm_nt(og + s * m * n, bd + s * k * n, ga + s * m * k, m, n, k);
                               }
                           }
                           if (in[1]->requires_grad) {
                               double* gb = in[1]->ensure_grad().data();
                               const double* ad = in[0]->data.data();
                               for (std::size_t s = 0; s < batch; ++s) {
                                   gemm_tn(ad + s * m * k, og + s * m * n, gb + s * k * n, m, k, n);
                               }
                           }
                       },
                       "bmm");
}

Tensor transpose(const Tensor& x)
{
    if (x.rank() < 2) throw DimensionError("transpose: rank < 2: " + to_string(x.shape()));
    std::vector<std::size_t> order(x.rank());
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[x.rank() - 1], order[x.rank() - 2]);
    return permute(x, order);
}

// ---------------------------------------------------------------------------
// Shape

Tensor reshape(const Tensor& x, Shape shape)
{
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       },
                       "reshape");
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order)
{
    const std::size_t r = x.rank();
    if (order.size() != r) throw DimensionError("permute: order length differs from rank");
    std::vector<bool> used(r, false);
    for (auto ax : order) {
        if (ax >= r || used[ax]) throw DimensionError("permute: invalid axis order");
        used[ax] = true;
    }
    const Shape& in_shape = x.shape();
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[order[i]];
    const auto in_strides = strides_of(in_shape);
    // src_index[out_flat] gives the matching input offset.
    std::vector<std::size_t> src(x.numel());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < src.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[order[i]];
        src[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    const auto xd = x.data();
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[src[i]];
    return make_result(std::move(out_shape), std::move(out), {x.impl()},
                       [src = std::move(src)](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += o.grad[i];
                       },
                       "permute");
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end)
{
    if (axis >= x.rank()) throw DimensionError("slice: axis out of range");
    if (begin >= end || end > x.dim(axis)) {
        throw DimensionError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") on axis of length " + std::to_string(x.dim(axis)));
    }
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = end - begin, full = s[axis];
    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<double> out(outer * len * inner);
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    }
    return make_result(std::move(out_shape), std::move(out), {x.impl()},
                       [outer, inner, len, full, begin](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t b = 0; b < outer; ++b) {
                               const double* src = o.grad.data() + b * len * inner;
                               double* dst = g.data() + (b * full + begin) * inner;
                               for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                           }
                       },
                       "slice");
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis)
{
    if (xs.empty()) throw DimensionError("concat: empty input list");
    const Shape& first = xs.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range");
    std::size_t total = 0;
    for (const auto& t : xs) {
        const Shape& s = t.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
        if (!ok) throw DimensionError("concat: " + to_string(s) + " incompatible with " + to_string(first));
        total += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    Shape out_shape = first;
    out_shape[axis] = total;
    std::vector<double> out(outer * total * inner);
    std::vector<std::size_t> widths;
    std::vector<ImplPtr> inputs;
    std::size_t offset = 0;
    for (const auto& t : xs) {
        const std::size_t w = t.dim(axis) * inner;
        const auto td = t.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
        }
        offset += w;
        widths.push_back(w);
        inputs.push_back(t.impl());
    }
    const std::size_t row = total * inner;
    return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                       [outer, row, widths = std::move(widths)](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           std::size_t off = 0;
                           for (std::size_t t = 0; t < in.size(); ++t) {
                               const std::size_t w = widths[t];
                               if (in[t]->requires_grad) {
                                   auto& g = in[t]->ensure_grad();
                                   for (std::size_t b = 0; b < outer; ++b) {
                                       const double* src = o.grad.data() + b * row + off;
                                       double* dst = g.data() + b * w;
                                       for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
                                   }
                               }
                               off += w;
                           }
                       },
                       "concat");
}

Tensor expand_leading(const Tensor& x, std::size_t count)
{
    if (count == 0) throw DimensionError("expand_leading: count must be positive");
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    const auto xd = x.data();
    const std::size_t n = xd.size();
    std::vector<double> out(count * n);
    for (std::size_t c = 0; c < count; ++c) std::copy(xd.begin(), xd.end(), out.begin() + static_cast<std::ptrdiff_t>(c * n));
    return make_result(std::move(out_shape), std::move(out), {x.impl()},
                       [count, n](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t c = 0; c < count; ++c) {
                               for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[c * n + i];
                           }
                       },
                       "expand_leading");
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices)
{
    if (indices.empty()) throw DimensionError("gather: empty index list");
    const auto xd = x.data();
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xd.size()) throw DimensionError("gather: index out of range");
        out[i] = xd[indices[i]];
    }
    return make_result({indices.size()}, std::move(out), {x.impl()},
                       [indices](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < indices.size(); ++i) g[indices[i]] += o.grad[i];
                       },
                       "gather");
}

Tensor scatter(const Tensor& x, const std::vector<std::size_t>& indices, Shape shape)
{
    if (x.numel() != indices.size()) throw DimensionError("scatter: value count differs from index count");
    const std::size_t n = numel(shape);
    std::vector<double> out(n, 0.0);
    const auto xd = x.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n) throw DimensionError("scatter: index out of range");
        out[indices[i]] = xd[i];
    }
    return make_result(std::move(shape), std::move(out), {x.impl()},
                       [indices](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < indices.size(); ++i) g[i] += o.grad[indices[i]];
                       },
                       "scatter");
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

Tensor sum(const Tensor& x)
{
    const auto xd = x.data();
    const double total = std::accumulate(xd.begin(), xd.end(), 0.0);
    return make_result({1}, {total}, {x.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (auto& v : g) v += o.grad[0];
                       },
                       "sum");
}

Tensor mean(const Tensor& x, std::size_t axis)
{
    if (axis >= x.rank()) {
        throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
    }
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<double> out(outer * inner, 0.0);
    const auto xd = x.data();
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
            const double* src = xd.data() + (o * len + l) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    for (auto& v : out) v *= inv;
    return make_result(std::move(out_shape), std::move(out), {x.impl()},
                       [outer, inner, len, inv](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t b = 0; b < outer; ++b) {
                               const double* src = o.grad.data() + b * inner;
                               for (std::size_t l = 0; l < len; ++l) {
                                   double* dst = g.data() + (b * len + l) * inner;
                                   for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
                               }
                           }
                       },
                       "mean");
}

Tensor softmax_lastaxis(const Tensor& x)
{
    if (x.rank() < 1) throw DimensionError("softmax: rank 0");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xd.data() + r * n;
        double* dst = out.data() + r * n;
        const double mx = *std::max_element(src, src + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(src[j] - mx);
            z += dst[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
    }
    return make_result(x.shape(), std::move(out), {x.impl()},
                       [rows, n](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* y = o.data.data() + r * n;
                               const double* gy = o.grad.data() + r * n;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
                               double* gx = g.data() + r * n;
                               for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
                           }
                       },
                       "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps)
{
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    if (x.rank() < 1) throw DimensionError("layer_norm: rank 0");
    const std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                             to_string(gain.shape()) + " and " + to_string(bias.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    std::vector<double> out(xd.size());
    std::vector<double> xhat(xd.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += src[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (src[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gd[j] + bd[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x.impl(), gain.impl(), bias.impl()},
                       [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                           const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           const auto& gain = in[1]->data;
                           if (in[1]->requires_grad) {
                               auto& gg = in[1]->ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) gg[j] += o.grad[r * d + j] * xhat[r * d + j];
                           }
                           if (in[2]->requires_grad) {
                               auto& gb = in[2]->ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) gb[j] += o.grad[r * d + j];
                           }
                           if (in[0]->requires_grad) {
                               auto& gx = in[0]->ensure_grad();
                               const double inv_d = 1.0 / static_cast<double>(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gh = o.grad[r * d + j] * gain[j];
                                       m1 += gh;
                                       m2 += gh * xhat[r * d + j];
                                   }
                                   m1 *= inv_d;
                                   m2 *= inv_d;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gh = o.grad[r * d + j] * gain[j];
                                       gx[r * d + j] += inv_std[r] * (gh - m1 - xhat[r * d + j] * m2);
                                   }
                               }
                           }
                       },
                       "layer_norm");
}

// ---------------------------------------------------------------------------
// Estimators

Tensor straight_through(const Tensor& hard, const Tensor& soft)
{
    require_same_shape(hard, soft, "straight_through");
    std::vector<double> out(hard.data().begin(), hard.data().end());
    return make_result(hard.shape(), std::move(out), {soft.impl()},
                       [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                           auto& g = in[0]->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       },
                       "straight_through");
}

}  // namespace vqasc
