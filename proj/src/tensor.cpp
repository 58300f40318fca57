#include "bido/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "bido/error.hpp"

namespace bido {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b = {}) {
    throw Error(ErrorCode::ShapeMismatch, op + " " + shape_str(a) + (b.empty() ? "" : " vs " + shape_str(b)));
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw Error(ErrorCode::ShapeMismatch, std::string(op) + " on undefined tensor");
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, std::string("forward of ") + op);
    }
}

// Builds a result node; parents and backward are kept only when some
// parent participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
    check_finite(value, op);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    const bool any = g_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Tensor::wrap(std::move(node));
}

// Index maps from each output element into the two broadcast inputs.
struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> ia;
    std::vector<std::size_t> ib;
    bool identical = false;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.identical = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    plan.out.resize(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) shape_error(op, a, b);
        plan.out[d] = std::max(pa[d], pb[d]);
    }
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t d = rank; d-- > 0;) {
        sa[d] = pa[d] == 1 ? 0 : acc_a;
        sb[d] = pb[d] == 1 ? 0 : acc_b;
        acc_a *= pa[d];
        acc_b *= pb[d];
    }
    const std::size_t n = numel(plan.out);
    plan.ia.resize(n);
    plan.ib.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off_a = 0, off_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        plan.ia[i] = off_a;
        plan.ib[i] = off_b;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < plan.out[d]) {
                off_a += sa[d];
                off_b += sb[d];
                break;
            }
            off_a -= sa[d] * (plan.out[d] - 1);
            off_b -= sb[d] * (plan.out[d] - 1);
            idx[d] = 0;
        }
    }
    return plan;
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
    check_defined(a, op);
    check_defined(b, op);
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(op, a.shape(), b.shape()));
    const auto& va = a.values();
    const auto& vb = b.values();
    const std::size_t n = numel(plan->out);
    std::vector<double> out(n);
    if (plan->identical) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(va[i], vb[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(va[plan->ia[i]], vb[plan->ib[i]]);
    }
    return make_result(op, plan->out, std::move(out), {a.node(), b.node()}, [plan, grad_a, grad_b](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t n = self.value.size();
        auto ia = [&](std::size_t i) { return plan->identical ? i : plan->ia[i]; };
        auto ib = [&](std::size_t i) { return plan->identical ? i : plan->ib[i]; };
        if (pa.requires_grad) {
            auto& ga = pa.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                ga[ia(i)] += grad_a(self.grad[i], pa.value[ia(i)], pb.value[ib(i)], self.value[i]);
            }
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                gb[ib(i)] += grad_b(self.grad[i], pa.value[ia(i)], pb.value[ib(i)], self.value[i]);
            }
        }
    });
}

template <typename Fwd, typename Grad>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, Grad grad) {
    check_defined(a, op);
    const auto& va = a.values();
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
    return make_result(op, a.shape(), std::move(out), {a.node()}, [grad](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad(self.grad[i], p.value[i], self.value[i]);
    });
}

// [outer, axis, inner] decomposition of a shape around one axis.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
    r.extent = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
    return r;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* arow = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void gemm_acc_bt(const double* dC, const double* B, double* dA, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = dC + i * n;
        double* da = dA + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* b = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
            da[p] += acc;
        }
    }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void gemm_acc_at(const double* A, const double* dC, double* dB, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* g = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* db = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) db[j] += av * g[j];
        }
    }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Tensor::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value.assign(numel(shape), 0.0);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : node_(std::make_shared<Node>()) {
    if (values.size() != numel(shape)) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on " + shape_str(shape()));
    return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor Tensor::clone() const {
    Tensor t(node_->shape, node_->value, node_->requires_grad);
    t.node_->grad = node_->grad;
    return t;
}

void Tensor::backward() const {
    if (size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward() from non-scalar " + shape_str(shape()));
    Tape::record(*this).run(*this);
}

Tape Tape::record(const Tensor& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    // Iterative post-order DFS; reversed, it is a reverse topological order.
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodePtr parent = node->parents[next++];
            if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(tape.order_.begin(), tape.order_.end());
    return tape;
}

void Tape::run(const Tensor& root) {
    if (order_.empty()) return;
    auto& g = root.node()->grad_buffer();
    for (double& v : g) v += 1.0;
    for (const NodePtr& node : order_) {
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
    const std::size_t m = a.shape()[a.rank() - 2];
    const std::size_t k = a.shape().back();
    const std::size_t kb = b.shape()[b.rank() - 2];
    const std::size_t n = b.shape().back();
    if (k != kb) shape_error("matmul", a.shape(), b.shape());
    const bool shared_rhs = b.rank() == 2;
    if (!shared_rhs && !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(), b.shape().end() - 2)) {
        shape_error("matmul", a.shape(), b.shape());
    }
    const std::size_t batch = a.size() / (m * k);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);

    std::vector<double> out(batch * m * n, 0.0);
    const double* A = a.values().data();
    const double* B = b.values().data();
    if (shared_rhs) {
        gemm_acc(A, B, out.data(), batch * m, k, n);
    } else {
        for (std::size_t s = 0; s < batch; ++s) gemm_acc(A + s * m * k, B + s * k * n, out.data() + s * m * n, m, k, n);
    }
    return make_result("matmul", std::move(out_shape), std::move(out), {a.node(), b.node()},
                       [batch, m, k, n, shared_rhs](Node& self) {
                           Node& pa = *self.parents[0];
                           Node& pb = *self.parents[1];
                           const double* G = self.grad.data();
                           if (pa.requires_grad) {
                               double* dA = pa.grad_buffer().data();
                               if (shared_rhs) {
                                   gemm_acc_bt(G, pb.value.data(), dA, batch * m, k, n);
                               } else {
                                   for (std::size_t s = 0; s < batch; ++s) {
                                       gemm_acc_bt(G + s * m * n, pb.value.data() + s * k * n, dA + s * m * k, m, k, n);
                                   }
                               }
                           }
                           if (pb.requires_grad) {
                               double* dB = pb.grad_buffer().data();
                               if (shared_rhs) {
                                   gemm_acc_at(pa.value.data(), G, dB, batch * m, k, n);
                               } else {
                                   for (std::size_t s = 0; s < batch; ++s) {
                                       gemm_acc_at(pa.value.data() + s * m * k, G + s * m * n, dB + s * k * n, m, k, n);
                                   }
                               }
                           }
                       });
}

Tensor transpose(const Tensor& a) {
    check_defined(a, "transpose");
    if (a.rank() < 2) shape_error("transpose", a.shape());
    const std::size_t r = a.shape()[a.rank() - 2];
    const std::size_t c = a.shape().back();
    const std::size_t batch = a.size() / (r * c);
    Shape out_shape = a.shape();
    std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
    std::vector<double> out(a.size());
    const auto& v = a.values();
    for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[s * r * c + j * r + i] = v[s * r * c + i * c + j];
    return make_result("transpose", std::move(out_shape), std::move(out), {a.node()}, [batch, r, c](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[s * r * c + i * c + j] += self.grad[s * r * c + j * r + i];
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double, double) { return g; },
        [](double g, double, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double, double) { return g; },
        [](double g, double, double, double) { return -g; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    return binary_op(
        "hadamard", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y, double) { return g * y; }, [](double g, double x, double, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; }, [](double g, double, double y, double) { return g / y; },
        [](double g, double, double y, double out) { return -g * out / y; });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    check_defined(a, "broadcast_to");
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast("broadcast_to", a.shape(), shape));
    if (plan->out != shape) shape_error("broadcast_to", a.shape(), shape);
    std::vector<double> out(numel(shape));
    const auto& v = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[plan->identical ? i : plan->ia[i]];
    return make_result("broadcast_to", shape, std::move(out), {a.node()}, [plan](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[plan->identical ? i : plan->ia[i]] += self.grad[i];
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary_op(
        "scale", a, [s](double x) { return s * x; }, [s](double g, double, double) { return s * g; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(
        "add_scalar", a, [s](double x) { return x + s; }, [](double g, double, double) { return g; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a,
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double g, double x, double) { return x > 0 ? g : 0.0; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double g, double, double y) { return g / (2.0 * y); });
}

Tensor clamp_min(const Tensor& a, double lo) {
    return unary_op(
        "clamp_min", a, [lo](double x) { return x > lo ? x : lo; },
        [lo](double g, double x, double) { return x > lo ? g : 0.0; });
}

Tensor outer_product(const Tensor& a, const Tensor& b) {
    check_defined(a, "outer_product");
    check_defined(b, "outer_product");
    if (a.rank() < 1 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin(), b.shape().end() - 1)) {
        shape_error("outer_product", a.shape(), b.shape());
    }
    const std::size_t n = a.shape().back();
    const std::size_t m = b.shape().back();
    const std::size_t batch = n == 0 ? 0 : a.size() / n;
    Shape out_shape = a.shape();
    out_shape.push_back(m);
    std::vector<double> out(batch * n * m);
    const auto& va = a.values();
    const auto& vb = b.values();
    for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[(s * n + i) * m + j] = va[s * n + i] * vb[s * m + j];
    return make_result("outer_product", std::move(out_shape), std::move(out), {a.node(), b.node()},
                       [batch, n, m](Node& self) {
                           Node& pa = *self.parents[0];
                           Node& pb = *self.parents[1];
                           const auto& g = self.grad;
                           if (pa.requires_grad) {
                               auto& ga = pa.grad_buffer();
                               for (std::size_t s = 0; s < batch; ++s)
                                   for (std::size_t i = 0; i < n; ++i) {
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < m; ++j) acc += g[(s * n + i) * m + j] * pb.value[s * m + j];
                                       ga[s * n + i] += acc;
                                   }
                           }
                           if (pb.requires_grad) {
                               auto& gb = pb.grad_buffer();
                               for (std::size_t s = 0; s < batch; ++s)
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t j = 0; j < m; ++j)
                                           gb[s * m + j] += g[(s * n + i) * m + j] * pa.value[s * n + i];
                           }
                       });
}

Tensor softmax(const Tensor& a) {
    check_defined(a, "softmax");
    if (a.rank() < 1 || a.shape().back() == 0) shape_error("softmax", a.shape());
    const std::size_t n = a.shape().back();
    const std::size_t rows = a.size() / n;
    const auto& v = a.values();
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = v.data() + r * n;
        double* y = out.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    return make_result("softmax", a.shape(), std::move(out), {a.node()}, [rows, n](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
        }
    });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a, std::size_t axis) {
    check_defined(a, "sum");
    if (axis >= a.rank()) shape_error("sum", a.shape());
    const AxisSplit sp = split_at(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const auto& v = a.values();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.extent + e) * sp.inner + i];
    return make_result("sum", std::move(out_shape), std::move(out), {a.node()}, [sp](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
                for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor mean(const Tensor& a, std::size_t axis) {
    check_defined(a, "mean");
    if (axis >= a.rank() || a.shape()[axis] == 0) shape_error("mean", a.shape());
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Tensor sum_all(const Tensor& a) {
    check_defined(a, "sum_all");
    const auto& v = a.values();
    double s = 0.0;
    for (double x : v) s += x;
    return make_result("sum_all", {}, {s}, {a.node()}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (double& x : g) x += self.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    check_defined(a, "mean_all");
    if (a.size() == 0) shape_error("mean_all", a.shape());
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor l2norm(const Tensor& a) {
    check_defined(a, "l2norm");
    if (a.rank() < 1) shape_error("l2norm", a.shape());
    const std::size_t n = a.shape().back();
    const std::size_t rows = n == 0 ? 0 : a.size() / n;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    std::vector<double> out(rows);
    const auto& v = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += v[r * n + j] * v[r * n + j];
        out[r] = std::sqrt(s);
    }
    return make_result("l2norm", std::move(out_shape), std::move(out), {a.node()}, [rows, n](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            if (self.value[r] == 0.0) continue;
            const double f = self.grad[r] / self.value[r];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += f * p.value[r * n + j];
        }
    });
}

// ---- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
    check_defined(x, "conv2d");
    check_defined(w, "conv2d");
    if (x.rank() != 4 || w.rank() != 4 || x.dim(3) != w.dim(2) || stride == 0) shape_error("conv2d", x.shape(), w.shape());
    const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const std::size_t KH = w.dim(0), KW = w.dim(1), O = w.dim(3);
    if (KH > H || KW > W) shape_error("conv2d", x.shape(), w.shape());
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) shape_error("conv2d bias", bias.shape());
    const std::size_t OH = (H - KH) / stride + 1;
    const std::size_t OW = (W - KW) / stride + 1;

    std::vector<double> out(N * OH * OW * O, 0.0);
    const double* X = x.values().data();
    const double* Wt = w.values().data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double* o = out.data() + ((n * OH + oy) * OW + ox) * O;
                if (bias.defined()) std::copy_n(bias.values().data(), O, o);
                for (std::size_t ky = 0; ky < KH; ++ky)
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const double* xp = X + ((n * H + oy * stride + ky) * W + ox * stride + kx) * C;
                        const double* wp = Wt + (ky * KW + kx) * C * O;
                        for (std::size_t c = 0; c < C; ++c) {
                            const double xv = xp[c];
                            if (xv == 0.0) continue;
                            const double* wr = wp + c * O;
                            for (std::size_t k = 0; k < O; ++k) o[k] += xv * wr[k];
                        }
                    }
            }

    std::vector<NodePtr> parents{x.node(), w.node()};
    if (bias.defined()) parents.push_back(bias.node());
    return make_result(
        "conv2d", {N, OH, OW, O}, std::move(out), std::move(parents),
        [=](Node& self) {
            Node& px = *self.parents[0];
            Node& pw = *self.parents[1];
            const double* G = self.grad.data();
            double* dX = px.requires_grad ? px.grad_buffer().data() : nullptr;
            double* dW = pw.requires_grad ? pw.grad_buffer().data() : nullptr;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t oy = 0; oy < OH; ++oy)
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        const double* g = G + ((n * OH + oy) * OW + ox) * O;
                        for (std::size_t ky = 0; ky < KH; ++ky)
                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                const std::size_t xoff = ((n * H + oy * stride + ky) * W + ox * stride + kx) * C;
                                const std::size_t woff = (ky * KW + kx) * C * O;
                                for (std::size_t c = 0; c < C; ++c) {
                                    const double* wr = pw.value.data() + woff + c * O;
                                    if (dX) {
                                        double acc = 0.0;
                                        for (std::size_t k = 0; k < O; ++k) acc += g[k] * wr[k];
                                        dX[xoff + c] += acc;
                                    }
                                    if (dW) {
                                        const double xv = px.value[xoff + c];
                                        if (xv == 0.0) continue;
                                        double* dw = dW + woff + c * O;
                                        for (std::size_t k = 0; k < O; ++k) dw[k] += xv * g[k];
                                    }
                                }
                            }
                    }
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                auto& db = self.parents[2]->grad_buffer();
                for (std::size_t i = 0; i < N * OH * OW; ++i)
                    for (std::size_t k = 0; k < O; ++k) db[k] += G[i * O + k];
            }
        });
}

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    check_defined(a, "reshape");
    if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_result("reshape", std::move(shape), std::move(out), {a.node()}, [](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor flatten(const Tensor& a) {
    check_defined(a, "flatten");
    if (a.rank() < 1) shape_error("flatten", a.shape());
    const std::size_t lead = a.dim(0);
    return reshape(a, {lead, lead == 0 ? 0 : a.size() / lead});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
    for (const Tensor& t : parts) check_defined(t, "concat");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) shape_error("concat", first);
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const Tensor& t : parts) {
        Shape s = t.shape();
        if (s.size() != first.size()) shape_error("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != first[d]) shape_error("concat", first, s);
        out_shape[axis] += s[axis];
        widths.push_back(split_at(s, axis).extent * split_at(s, axis).inner);
    }
    const std::size_t outer = split_at(first, axis).outer;
    const std::size_t row = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
    std::vector<double> out(outer * row);
    std::vector<NodePtr> parents;
    std::size_t at = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& v = parts[p].values();
        for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.data() + o * widths[p], widths[p], out.data() + o * row + at);
        at += widths[p];
        parents.push_back(parts[p].node());
    }
    return make_result("concat", std::move(out_shape), std::move(out), std::move(parents),
                       [outer, row, widths](Node& self) {
                           std::size_t at = 0;
                           for (std::size_t p = 0; p < widths.size(); ++p) {
                               Node& pn = *self.parents[p];
                               if (pn.requires_grad) {
                                   auto& g = pn.grad_buffer();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < widths[p]; ++i)
                                           g[o * widths[p] + i] += self.grad[o * row + at + i];
                               }
                               at += widths[p];
                           }
                       });
}

Tensor select(const Tensor& a, std::size_t axis, std::size_t index) {
    check_defined(a, "select");
    if (axis >= a.rank() || index >= a.shape()[axis]) shape_error("select", a.shape());
    const AxisSplit sp = split_at(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(sp.outer * sp.inner);
    const auto& v = a.values();
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(v.data() + (o * sp.extent + index) * sp.inner, sp.inner, out.data() + o * sp.inner);
    return make_result("select", std::move(out_shape), std::move(out), {a.node()}, [sp, index](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.extent + index) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    check_defined(a, "gather_rows");
    if (a.rank() < 1) shape_error("gather_rows", a.shape());
    const std::size_t width = a.dim(0) == 0 ? 0 : a.size() / a.dim(0);
    for (std::size_t r : rows)
        if (r >= a.dim(0)) shape_error("gather_rows", a.shape());
    Shape out_shape = a.shape();
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * width);
    const auto& v = a.values();
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(v.data() + rows[i] * width, width, out.data() + i * width);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result("gather_rows", std::move(out_shape), std::move(out), {a.node()}, [idx, width](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_defined(logits, "cross_entropy");
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0 || logits.dim(1) == 0) {
        shape_error("cross_entropy", logits.shape());
    }
    const std::size_t B = logits.dim(0), C = logits.dim(1);
    const auto& v = logits.values();
    auto probs = std::make_shared<std::vector<double>>(B * C);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= C) shape_error("cross_entropy label", logits.shape());
        const double* x = v.data() + b * C;
        const double mx = *std::max_element(x, x + C);
        double z = 0.0;
        for (std::size_t j = 0; j < C; ++j) z += std::exp(x[j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < C; ++j) (*probs)[b * C + j] = std::exp(x[j] - log_z);
        loss += log_z - x[y];
    }
    loss /= static_cast<double>(B);
    std::vector<int> ys(labels.begin(), labels.end());
    return make_result("cross_entropy", {}, {loss}, {logits.node()}, [probs, ys, B, C](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const double f = self.grad[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < C; ++j)
                g[b * C + j] += f * ((*probs)[b * C + j] - (static_cast<int>(j) == ys[b] ? 1.0 : 0.0));
    });
}

}  // namespace bido
