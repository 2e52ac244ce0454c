#include "dfr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace dfr {

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<float> values;
    bool requires_grad = false;
    std::vector<float> grad;  // sized iff requires_grad
    std::string op;           // empty for leaves
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
    bool consumed = false;

    int64_t numel() const {
        int64_t n = 1;
        for (int e : shape) n *= e;
        return n;
    }
};

}  // namespace detail

using detail::Node;

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ContractError("tensor extents must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

void check_finite(const Node& n) {
    for (float v : n.values) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite output of op '" + n.op + "' with shape " +
                               shape_str(n.shape));
        }
    }
}

std::shared_ptr<Node> make_leaf(std::vector<int> shape, std::vector<float> values,
                                bool requires_grad) {
    const int64_t n = numel_of(shape);
    if (static_cast<int64_t>(values.size()) != n) {
        throw ContractError("value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(static_cast<size_t>(n), 0.0f);
    return node;
}

// Build an op node. Parents are always retained for graph inspection;
// the backprop closure is installed only when a gradient path exists.
Tensor make_op(std::string op, std::vector<int> shape, std::vector<float> values,
               std::vector<Tensor> inputs, std::function<void(Node&)> backprop) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->op = std::move(op);
    bool rg = false;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        node->parents.push_back(t.node());
        rg = rg || t.requires_grad();
    }
    node->requires_grad = rg;
    if (rg) {
        node->grad.assign(node->values.size(), 0.0f);
        node->backprop = std::move(backprop);
    }
    check_finite(*node);
    return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw ContractError(std::string(who) + ": undefined tensor operand");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const Tensor& t, const char* who) {
    if (t.shape().size() != 2) {
        throw ContractError(std::string(who) + ": expected a rank-2 tensor, got " +
                            shape_str(t.shape()));
    }
}

void accumulate(Node& dst, const std::vector<float>& delta) {
    if (!dst.requires_grad) return;
    for (size_t i = 0; i < delta.size(); ++i) dst.grad[i] += delta[i];
}

}  // namespace

// ---- Tensor handle ----------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    const int64_t n = numel_of(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f),
                            requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    const int64_t n = numel_of(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<float>(static_cast<size_t>(n), value),
                            requires_grad));
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

int64_t Tensor::numel() const {
    require_defined(*this, "numel");
    return node_->numel();
}

int Tensor::rows() const {
    const auto& s = shape();
    return s.empty() ? 1 : s[0];
}

int Tensor::cols() const {
    const auto& s = shape();
    return s.empty() ? 1 : s.back();
}

bool Tensor::requires_grad() const {
    require_defined(*this, "requires_grad");
    return node_->requires_grad;
}

void Tensor::set_requires_grad(bool rg) {
    require_defined(*this, "set_requires_grad");
    if (!node_->op.empty()) {
        throw ContractError("set_requires_grad: only leaf tensors may be toggled (op '" +
                            node_->op + "')");
    }
    node_->requires_grad = rg;
    if (rg && node_->grad.size() != node_->values.size()) {
        node_->grad.assign(node_->values.size(), 0.0f);
    }
}

std::span<const float> Tensor::values() const {
    require_defined(*this, "values");
    return node_->values;
}

std::span<float> Tensor::values_mut() {
    require_defined(*this, "values_mut");
    if (!node_->op.empty()) {
        throw ContractError("values_mut: only leaf tensors are mutable");
    }
    return node_->values;
}

float Tensor::value() const {
    if (numel() != 1) {
        throw ContractError("value(): tensor is not a single element, shape " +
                            shape_str(shape()));
    }
    return node_->values[0];
}

float Tensor::at(int i) const {
    require_defined(*this, "at");
    return node_->values.at(static_cast<size_t>(i));
}

float Tensor::at(int i, int j) const {
    require_rank2(*this, "at");
    return node_->values.at(static_cast<size_t>(i) * shape()[1] + j);
}

bool Tensor::has_grad() const {
    require_defined(*this, "has_grad");
    return !node_->grad.empty();
}

std::span<const float> Tensor::grad() const {
    require_defined(*this, "grad");
    if (node_->grad.empty()) throw ContractError("grad(): tensor has no gradient buffer");
    return node_->grad;
}

std::span<float> Tensor::grad_mut() {
    require_defined(*this, "grad_mut");
    if (node_->grad.empty()) throw ContractError("grad_mut(): tensor has no gradient buffer");
    return node_->grad;
}

void Tensor::zero_grad() {
    require_defined(*this, "zero_grad");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detached_copy() const {
    require_defined(*this, "detached_copy");
    return Tensor(make_leaf(node_->shape, node_->values, false));
}

const std::string& Tensor::op() const {
    require_defined(*this, "op");
    return node_->op;
}

// ---- primitives -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ContractError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    }
    std::vector<float> out(static_cast<size_t>(m) * n);
    const auto av = a.values();
    const auto bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) {
                acc += static_cast<double>(av[static_cast<size_t>(i) * k + l]) *
                       static_cast<double>(bv[static_cast<size_t>(l) * n + j]);
            }
            out[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    }
    return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            for (int i = 0; i < m; ++i) {
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) {
                        acc += static_cast<double>(g[static_cast<size_t>(i) * n + j]) *
                               static_cast<double>(pb.values[static_cast<size_t>(l) * n + j]);
                    }
                    pa.grad[static_cast<size_t>(i) * k + l] += static_cast<float>(acc);
                }
            }
        }
        if (pb.requires_grad) {
            for (int l = 0; l < k; ++l) {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) {
                        acc += static_cast<double>(pa.values[static_cast<size_t>(i) * k + l]) *
                               static_cast<double>(g[static_cast<size_t>(i) * n + j]);
                    }
                    pb.grad[static_cast<size_t>(l) * n + j] += static_cast<float>(acc);
                }
            }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul_nt");
    require_defined(b, "matmul_nt");
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const int m = a.shape()[0], k = a.shape()[1];
    const int n = b.shape()[0], k2 = b.shape()[1];
    if (k != k2) {
        throw ContractError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()) + " (transposed)");
    }
    std::vector<float> out(static_cast<size_t>(m) * n);
    const auto av = a.values();
    const auto bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) {
                acc += static_cast<double>(av[static_cast<size_t>(i) * k + l]) *
                       static_cast<double>(bv[static_cast<size_t>(j) * k + l]);
            }
            out[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    }
    return make_op("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {  // dA = g . B
            for (int i = 0; i < m; ++i) {
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) {
                        acc += static_cast<double>(g[static_cast<size_t>(i) * n + j]) *
                               static_cast<double>(pb.values[static_cast<size_t>(j) * k + l]);
                    }
                    pa.grad[static_cast<size_t>(i) * k + l] += static_cast<float>(acc);
                }
            }
        }
        if (pb.requires_grad) {  // dB = g^T . A
            for (int j = 0; j < n; ++j) {
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) {
                        acc += static_cast<double>(g[static_cast<size_t>(i) * n + j]) *
                               static_cast<double>(pa.values[static_cast<size_t>(i) * k + l]);
                    }
                    pb.grad[static_cast<size_t>(j) * k + l] += static_cast<float>(acc);
                }
            }
        }
    });
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                          BwdA bwd_a, BwdB bwd_b) {
    require_defined(a, name);
    require_defined(b, name);
    require_same_shape(a, b, name);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_op(name, a.shape(), std::move(out), {a, b}, [bwd_a, bwd_b](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const float g = self.grad[i];
            if (pa.requires_grad) pa.grad[i] += bwd_a(g, pa.values[i], pb.values[i]);
            if (pb.requires_grad) pb.grad[i] += bwd_b(g, pa.values[i], pb.values[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](float x, float y) { return x + y; },
        [](float g, float, float) { return g; }, [](float g, float, float) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](float x, float y) { return x - y; },
        [](float g, float, float) { return g; }, [](float g, float, float) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](float x, float y) { return x * y; },
        [](float g, float, float y) { return g * y; },
        [](float g, float x, float) { return g * x; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_defined(x, "add_bias");
    require_defined(bias, "add_bias");
    require_rank2(x, "add_bias");
    if (bias.shape().size() != 1 || bias.shape()[0] != x.shape()[1]) {
        throw ContractError("add_bias: bias shape " + shape_str(bias.shape()) +
                            " does not broadcast over " + shape_str(x.shape()));
    }
    const int m = x.shape()[0], n = x.shape()[1];
    const auto xv = x.values();
    const auto bv = bias.values();
    std::vector<float> out(xv.size());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] + bv[j];
        }
    }
    return make_op("add_bias", x.shape(), std::move(out), {x, bias}, [m, n](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) accumulate(px, self.grad);
        if (pb.requires_grad) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i) {
                    acc += static_cast<double>(self.grad[static_cast<size_t>(i) * n + j]);
                }
                pb.grad[j] += static_cast<float>(acc);
            }
        }
    });
}

Tensor relu(const Tensor& x) {
    require_defined(x, "relu");
    const auto xv = x.values();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    return make_op("relu", x.shape(), std::move(out), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (px.values[i] > 0.0f) px.grad[i] += self.grad[i];
        }
    });
}

Tensor tanh(const Tensor& x) {
    require_defined(x, "tanh");
    const auto xv = x.values();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
    return make_op("tanh", x.shape(), std::move(out), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const float y = self.values[i];
            px.grad[i] += self.grad[i] * (1.0f - y * y);
        }
    });
}

namespace {

// Shared rowwise softmax/log-softmax forward with max shift.
void softmax_rows(std::span<const float> in, int rows, int cols, bool log_form,
                  std::vector<float>& out) {
    out.resize(in.size());
    for (int i = 0; i < rows; ++i) {
        const size_t base = static_cast<size_t>(i) * cols;
        float m = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < cols; ++j) m = std::max(m, in[base + j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            s += std::exp(static_cast<double>(in[base + j]) - static_cast<double>(m));
        }
        if (log_form) {
            const double log_s = std::log(s);
            for (int j = 0; j < cols; ++j) {
                out[base + j] = static_cast<float>(static_cast<double>(in[base + j]) -
                                                   static_cast<double>(m) - log_s);
            }
        } else {
            for (int j = 0; j < cols; ++j) {
                out[base + j] = static_cast<float>(
                    std::exp(static_cast<double>(in[base + j]) - static_cast<double>(m)) / s);
            }
        }
    }
}

}  // namespace

Tensor softmax(const Tensor& x) {
    require_defined(x, "softmax");
    require_rank2(x, "softmax");
    const int m = x.shape()[0], n = x.shape()[1];
    std::vector<float> out;
    softmax_rows(x.values(), m, n, /*log_form=*/false, out);
    return make_op("softmax", x.shape(), std::move(out), {x}, [m, n](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const size_t base = static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) {
                dot += static_cast<double>(self.grad[base + j]) *
                       static_cast<double>(self.values[base + j]);
            }
            for (int j = 0; j < n; ++j) {
                px.grad[base + j] += static_cast<float>(
                    static_cast<double>(self.values[base + j]) *
                    (static_cast<double>(self.grad[base + j]) - dot));
            }
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    require_defined(x, "log_softmax");
    require_rank2(x, "log_softmax");
    const int m = x.shape()[0], n = x.shape()[1];
    std::vector<float> out;
    softmax_rows(x.values(), m, n, /*log_form=*/true, out);
    return make_op("log_softmax", x.shape(), std::move(out), {x}, [m, n](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const size_t base = static_cast<size_t>(i) * n;
            double gsum = 0.0;
            for (int j = 0; j < n; ++j) gsum += static_cast<double>(self.grad[base + j]);
            for (int j = 0; j < n; ++j) {
                const double p = std::exp(static_cast<double>(self.values[base + j]));
                px.grad[base + j] += static_cast<float>(
                    static_cast<double>(self.grad[base + j]) - p * gsum);
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    double acc = 0.0;
    for (float v : x.values()) acc += static_cast<double>(v);
    return make_op("sum", {1}, {static_cast<float>(acc)}, {x}, [](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        const float g = self.grad[0];
        for (auto& gv : px.grad) gv += g;
    });
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean");
    double acc = 0.0;
    for (float v : x.values()) acc += static_cast<double>(v);
    const double n = static_cast<double>(x.numel());
    return make_op("mean", {1}, {static_cast<float>(acc / n)}, {x}, [n](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        const float g = static_cast<float>(static_cast<double>(self.grad[0]) / n);
        for (auto& gv : px.grad) gv += g;
    });
}

Tensor row_sum(const Tensor& x) {
    require_defined(x, "row_sum");
    require_rank2(x, "row_sum");
    const int m = x.shape()[0], n = x.shape()[1];
    const auto xv = x.values();
    std::vector<float> out(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += static_cast<double>(xv[static_cast<size_t>(i) * n + j]);
        out[i] = static_cast<float>(acc);
    }
    return make_op("row_sum", {m}, std::move(out), {x}, [m, n](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (int i = 0; i < m; ++i) {
            const float g = self.grad[i];
            for (int j = 0; j < n; ++j) px.grad[static_cast<size_t>(i) * n + j] += g;
        }
    });
}

namespace {

Tensor batch_distance(const char* name, const Tensor& a, const Tensor& b, bool squared) {
    require_defined(a, name);
    require_defined(b, name);
    require_same_shape(a, b, name);
    if (a.shape().empty() || a.shape().size() > 2) {
        throw ContractError(std::string(name) + ": expected rank-1 or rank-2 operands, got " +
                            shape_str(a.shape()));
    }
    const int rows = a.shape().size() == 2 ? a.shape()[0] : 1;
    const auto av = a.values();
    const auto bv = b.values();
    double acc = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        acc += squared ? d * d : std::abs(d);
    }
    const float out = static_cast<float>(acc / rows);
    return make_op(name, {1}, {out}, {a, b}, [rows, squared](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const float g = self.grad[0];
        const float inv_rows = 1.0f / static_cast<float>(rows);
        for (size_t i = 0; i < pa.values.size(); ++i) {
            const float d = pa.values[i] - pb.values[i];
            float local;
            if (squared) {
                local = 2.0f * d * inv_rows;
            } else {
                local = (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f)) * inv_rows;
            }
            if (pa.requires_grad) pa.grad[i] += g * local;
            if (pb.requires_grad) pb.grad[i] -= g * local;
        }
    });
}

}  // namespace

Tensor l1_distance(const Tensor& a, const Tensor& b) {
    return batch_distance("l1_distance", a, b, /*squared=*/false);
}

Tensor squared_l2_distance(const Tensor& a, const Tensor& b) {
    return batch_distance("squared_l2_distance", a, b, /*squared=*/true);
}

Tensor log(const Tensor& x) {
    require_defined(x, "log");
    const auto xv = x.values();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
    return make_op("log", x.shape(), std::move(out), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            px.grad[i] += self.grad[i] / px.values[i];
        }
    });
}

Tensor scale(const Tensor& x, float s) {
    require_defined(x, "scale");
    if (!std::isfinite(s)) throw ContractError("scale: non-finite factor");
    const auto xv = x.values();
    std::vector<float> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
    return make_op("scale", x.shape(), std::move(out), {x}, [s](Node& self) {
        Node& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += s * self.grad[i];
    });
}

Tensor l2_normalize_rows(const Tensor& x, float eps) {
    require_defined(x, "l2_normalize_rows");
    require_rank2(x, "l2_normalize_rows");
    if (eps <= 0.0f) throw ContractError("l2_normalize_rows: eps must be positive");
    const int m = x.shape()[0], n = x.shape()[1];
    const auto xv = x.values();
    std::vector<float> out(xv.size());
    std::vector<float> inv_norm(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const size_t base = static_cast<size_t>(i) * n;
        double s = static_cast<double>(eps);
        for (int j = 0; j < n; ++j) {
            s += static_cast<double>(xv[base + j]) * static_cast<double>(xv[base + j]);
        }
        const float r = static_cast<float>(1.0 / std::sqrt(s));
        inv_norm[i] = r;
        for (int j = 0; j < n; ++j) out[base + j] = xv[base + j] * r;
    }
    return make_op("l2_normalize_rows", x.shape(), std::move(out), {x},
                   [m, n, inv_norm](Node& self) {
                       Node& px = *self.parents[0];
                       if (!px.requires_grad) return;
                       for (int i = 0; i < m; ++i) {
                           const size_t base = static_cast<size_t>(i) * n;
                           const double r = static_cast<double>(inv_norm[i]);
                           double dot = 0.0;
                           for (int j = 0; j < n; ++j) {
                               dot += static_cast<double>(self.grad[base + j]) *
                                      static_cast<double>(px.values[base + j]);
                           }
                           // dx_j = g_j * r - x_j * (g . x) * r^3
                           for (int j = 0; j < n; ++j) {
                               const double gj = static_cast<double>(self.grad[base + j]);
                               const double xj = static_cast<double>(px.values[base + j]);
                               px.grad[base + j] +=
                                   static_cast<float>(gj * r - xj * dot * r * r * r);
                           }
                       }
                   });
}

// ---- constants & composites -------------------------------------------------

Tensor one_hot(const std::vector<int>& column_indices, int num_columns) {
    if (num_columns <= 0) throw ContractError("one_hot: num_columns must be positive");
    const int rows = static_cast<int>(column_indices.size());
    if (rows == 0) throw ContractError("one_hot: empty index list");
    std::vector<float> out(static_cast<size_t>(rows) * num_columns, 0.0f);
    for (int i = 0; i < rows; ++i) {
        const int c = column_indices[i];
        if (c < 0 || c >= num_columns) {
            throw ContractError("one_hot: index " + std::to_string(c) + " out of range [0, " +
                                std::to_string(num_columns) + ")");
        }
        out[static_cast<size_t>(i) * num_columns + c] = 1.0f;
    }
    return Tensor::from_values({rows, num_columns}, std::move(out), false);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& target_columns) {
    require_defined(logits, "cross_entropy");
    require_rank2(logits, "cross_entropy");
    const int rows = logits.shape()[0];
    if (static_cast<int>(target_columns.size()) != rows) {
        throw ContractError("cross_entropy: " + std::to_string(target_columns.size()) +
                            " targets for " + std::to_string(rows) + " rows");
    }
    const Tensor targets = one_hot(target_columns, logits.shape()[1]);
    return scale(sum(mul(log_softmax(logits), targets)), -1.0f / static_cast<float>(rows));
}

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            shape_str(loss.shape()));
    }
    auto root = loss.node();
    if (!root->requires_grad) {
        throw ContractError("backward: loss has no gradient path (no input requires grad)");
    }

    // Post-order topological sort over the grad-requiring subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    if (root->consumed) {
        throw StaleGraphError("backward: graph already back-propagated; rebuild the forward pass");
    }
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                if (p->consumed) {
                    throw StaleGraphError(
                        "backward: graph already back-propagated; rebuild the forward pass");
                }
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 0.0f);
    root->grad[0] = 1.0f;

    // `order` is post-order (leaves first); walk it backwards.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop) {
            node->backprop(*node);
            node->consumed = true;
            node->backprop = nullptr;
        }
    }
}

std::map<std::string, int> graph_op_counts(const Tensor& root) {
    require_defined(root, "graph_op_counts");
    std::map<std::string, int> counts;
    std::unordered_set<Node*> visited;
    std::deque<Node*> queue{root.node().get()};
    visited.insert(root.node().get());
    while (!queue.empty()) {
        Node* node = queue.front();
        queue.pop_front();
        if (!node->op.empty()) ++counts[node->op];
        for (const auto& p : node->parents) {
            if (visited.insert(p.get()).second) queue.push_back(p.get());
        }
    }
    return counts;
}

}  // namespace dfr
