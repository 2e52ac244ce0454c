#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dfr/errors.hpp"

namespace dfr {

namespace detail {
struct Node;
}

// Dense float32 tensor participating in a reverse-mode differentiation
// graph. Value-like handle: copies share storage, ops build fresh nodes.
// Reductions accumulate in double; storage is always float32.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<float> values,
                              bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int64_t numel() const;
    int rows() const;  // shape[0], or 1 for rank-0/1
    int cols() const;  // last extent

    bool requires_grad() const;
    void set_requires_grad(bool rg);  // leaf tensors only

    std::span<const float> values() const;
    std::span<float> values_mut();  // leaf tensors only; invalidates nothing
    float value() const;            // single-element tensors
    float at(int i) const;
    float at(int i, int j) const;

    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> grad_mut();
    void zero_grad();

    // Fresh leaf with copied values, detached from any graph.
    Tensor detached_copy() const;

    const std::string& op() const;  // empty for leaves

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// ---- primitives -----------------------------------------------------------
// Every op validates operand shapes (ContractError) and checks the output
// for NaN/Inf (NumericError). Output is recorded in the graph when any
// input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [m,n] + [n]
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x);      // rowwise, max-shifted
Tensor log_softmax(const Tensor& x);  // rowwise, max-shifted
Tensor sum(const Tensor& x);          // all elements -> [1]
Tensor mean(const Tensor& x);         // all elements -> [1]
Tensor row_sum(const Tensor& x);      // [m,n] -> [m]
Tensor l1_distance(const Tensor& a, const Tensor& b);          // sum|a-b| / rows
Tensor squared_l2_distance(const Tensor& a, const Tensor& b);  // sum(a-b)^2 / rows
Tensor log(const Tensor& x);          // elementwise natural log
Tensor scale(const Tensor& x, float s);
// Rowwise x / sqrt(sum(x^2) + eps); the one primitive beyond the training
// losses' needs, required for differentiable cosine logits.
Tensor l2_normalize_rows(const Tensor& x, float eps = 1e-12f);

// ---- constants & composites ------------------------------------------------

// Constant one-hot matrix [n, num_columns]; column_indices[i] in range.
Tensor one_hot(const std::vector<int>& column_indices, int num_columns);

// Mean negative log-likelihood over the batch, in nats. Composed from
// log_softmax / mul / sum / scale.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& target_columns);

// ---- backward ---------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Populates grad on every
// grad-requiring leaf reachable from `loss`; leaves allocated with
// requires_grad carry zero grads even when unreachable. Graph nodes are
// consumed: a second backward through them raises StaleGraphError.
void backward(const Tensor& loss);

// Count of each primitive op in the graph reachable from `root`.
std::map<std::string, int> graph_op_counts(const Tensor& root);

std::string shape_str(const std::vector<int>& shape);

}  // namespace dfr
