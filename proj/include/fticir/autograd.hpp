#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 matrices.
//
// Every value is a matrix; vectors are 1 x d rows. A graph is built eagerly
// as operations are applied and torn down when the last Tensor referring to
// it goes away. Leaves created with requires_grad=true (trainable
// parameters, pseudo-token probes in tests) collect gradients on backward().

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace fticir::ag {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(const Node&)> backward;

    void accumulate(const Matrix& g);
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor leaf(Matrix value, bool requires_grad = false);
    static Tensor constant(Matrix value) { return leaf(std::move(value), false); }

    bool defined() const noexcept { return node_ != nullptr; }
    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    // Zero matrix of the right shape when nothing has been accumulated.
    Matrix grad() const;
    bool has_grad() const { return node_->grad.size() != 0; }
    void zero_grad() { node_->grad.resize(0, 0); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double item() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Runs reverse accumulation from a 1x1 tensor.
void backward(const Tensor& root);

// Extension point for operations implemented outside this file (e.g. a
// plugin text tower). `fn` receives the output node and must accumulate into
// node.parents[i] for every input i that requires grad.
Tensor make_op(Matrix value, std::span<const Tensor> inputs, std::function<void(const Node&)> fn);

// Elementwise / linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast 1 x c over rows
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_constant(const Tensor& a, const Matrix& c);
Tensor add_constant(const Tensor& a, const Matrix& c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Nonlinearities.
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Rows scaled to unit L2 norm; zero rows stay zero (and pass zero gradient).
Tensor l2_normalize_rows(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor row_sums(const Tensor& a);  // r x 1
Tensor diagonal(const Tensor& a);  // n x 1 from n x n

// Structural.
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// `base` with row positions[i] replaced by rows[i] (each 1 x c).
Tensor replace_rows(const Matrix& base, std::span<const std::size_t> positions,
                    std::span<const Tensor> rows);

// Convenience built on the above.
Tensor cosine_rows(const Tensor& a, const Tensor& b);  // 1x d, 1x d -> 1x1
Tensor frobenius_sq(const Tensor& a);

}  // namespace fticir::ag
