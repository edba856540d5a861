#include "fticir/autograd.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

#include "fticir/errors.hpp"

namespace fticir::ag {

namespace {

thread_local bool t_grad_enabled = true;

using BackwardFn = std::function<void(const Node&)>;

Tensor make(Matrix value, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (t_grad_enabled) {
        for (const Tensor* input : inputs) {
            if (input->requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->parents.reserve(inputs.size());
        for (const Tensor* input : inputs) {
            node->parents.push_back(input->node());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

Tensor make_many(Matrix value, std::span<const Tensor> inputs, BackwardFn fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (t_grad_enabled) {
        for (const Tensor& input : inputs) {
            if (input.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->parents.reserve(inputs.size());
        for (const Tensor& input : inputs) {
            node->parents.push_back(input.node());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                   std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                   std::to_string(b.cols()));
    }
}

Node& parent(const Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (!requires_grad) {
        return;
    }
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Tensor Tensor::leaf(Matrix value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Matrix Tensor::grad() const {
    if (node_->grad.size() == 0) {
        return Matrix::Zero(node_->value.rows(), node_->value.cols());
    }
    return node_->grad;
}

double Tensor::item() const {
    require(rows() == 1 && cols() == 1, ErrorKind::shape, "item() on non-scalar tensor");
    return node_->value(0, 0);
}

Tensor make_op(Matrix value, std::span<const Tensor> inputs, std::function<void(const Node&)> fn) {
    return make_many(std::move(value), inputs, std::move(fn));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void backward(const Tensor& root) {
    require(root.rows() == 1 && root.cols() == 1, ErrorKind::shape, "backward() needs a scalar root");
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && p->backward && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->grad.size() != 0) {
            node->backward(*node);
        }
    }
    // Interior grads are no longer needed; leaves keep theirs.
    for (Node* node : order) {
        if (node->backward) {
            node->grad.resize(0, 0);
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        fail(ErrorKind::shape, "matmul: inner dimension mismatch " + std::to_string(a.cols()) + " vs " +
                                   std::to_string(b.rows()));
    }
    Matrix value = a.value() * b.value();
    return make(std::move(value), {&a, &b}, [](const Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
        if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        fail(ErrorKind::shape, "matmul_nt: width mismatch " + std::to_string(a.cols()) + " vs " +
                                   std::to_string(b.cols()));
    }
    Matrix value = a.value() * b.value().transpose();
    return make(std::move(value), {&a, &b}, [](const Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.accumulate(self.grad * pb.value);
        if (pb.requires_grad) pb.accumulate(self.grad.transpose() * pa.value);
    });
}

Tensor transpose(const Tensor& a) {
    Matrix value = a.value().transpose();
    return make(std::move(value), {&a}, [](const Node& self) {
        parent(self, 0).accumulate(self.grad.transpose());
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    return make(a.value() + b.value(), {&a, &b}, [](const Node& self) {
        parent(self, 0).accumulate(self.grad);
        parent(self, 1).accumulate(self.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    return make(a.value() - b.value(), {&a, &b}, [](const Node& self) {
        parent(self, 0).accumulate(self.grad);
        parent(self, 1).accumulate(-self.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    return make(a.value().cwiseProduct(b.value()), {&a, &b}, [](const Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
        if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        fail(ErrorKind::shape, "add_row: expected 1x" + std::to_string(a.cols()) + " row");
    }
    Matrix value = a.value().rowwise() + row.value().row(0);
    return make(std::move(value), {&a, &row}, [](const Node& self) {
        parent(self, 0).accumulate(self.grad);
        Node& pr = parent(self, 1);
        if (pr.requires_grad) pr.accumulate(self.grad.colwise().sum());
    });
}

Tensor scale(const Tensor& a, double s) {
    return make(a.value() * s, {&a}, [s](const Node& self) { parent(self, 0).accumulate(self.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
    Matrix value = a.value().array() + s;
    return make(std::move(value), {&a}, [](const Node& self) { parent(self, 0).accumulate(self.grad); });
}

Tensor mul_constant(const Tensor& a, const Matrix& c) {
    if (c.rows() != a.rows() || c.cols() != a.cols()) {
        fail(ErrorKind::shape, "mul_constant: shape mismatch");
    }
    return make(a.value().cwiseProduct(c), {&a}, [c](const Node& self) {
        parent(self, 0).accumulate(self.grad.cwiseProduct(c));
    });
}

Tensor add_constant(const Tensor& a, const Matrix& c) {
    if (c.rows() != a.rows() || c.cols() != a.cols()) {
        fail(ErrorKind::shape, "add_constant: shape mismatch");
    }
    return make(a.value() + c, {&a}, [](const Node& self) { parent(self, 0).accumulate(self.grad); });
}

Tensor gelu(const Tensor& a) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    const Matrix& x = a.value();
    Matrix value(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double v = x.data()[i];
        value.data()[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
    }
    return make(std::move(value), {&a}, [](const Node& self) {
        Node& p = parent(self, 0);
        const Matrix& x = p.value;
        Matrix g(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            double v = x.data()[i];
            double t = std::tanh(kC * (v + kA * v * v * v));
            double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
            g.data()[i] = d * self.grad.data()[i];
        }
        p.accumulate(g);
    });
}

Tensor tanh(const Tensor& a) {
    Matrix value = a.value().array().tanh();
    return make(std::move(value), {&a}, [](const Node& self) {
        Matrix d = (1.0 - self.value.array().square()).matrix();
        parent(self, 0).accumulate(self.grad.cwiseProduct(d));
    });
}

Tensor exp(const Tensor& a) {
    Matrix value = a.value().array().exp();
    return make(std::move(value), {&a}, [](const Node& self) {
        parent(self, 0).accumulate(self.grad.cwiseProduct(self.value));
    });
}

Tensor log(const Tensor& a) {
    Matrix value = a.value().array().log();
    return make(std::move(value), {&a}, [](const Node& self) {
        Node& p = parent(self, 0);
        p.accumulate((self.grad.array() / p.value.array()).matrix());
    });
}

Tensor square(const Tensor& a) {
    Matrix value = a.value().array().square();
    return make(std::move(value), {&a}, [](const Node& self) {
        Node& p = parent(self, 0);
        p.accumulate((2.0 * self.grad.array() * p.value.array()).matrix());
    });
}

Tensor softmax_rows(const Tensor& a) {
    const Matrix& x = a.value();
    Matrix value(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double m = x.row(r).maxCoeff();
        value.row(r) = (x.row(r).array() - m).exp();
        value.row(r) /= value.row(r).sum();
    }
    return make(std::move(value), {&a}, [](const Node& self) {
        const Matrix& y = self.value;
        Matrix g(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double dot = self.grad.row(r).dot(y.row(r));
            g.row(r) = y.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
        }
        parent(self, 0).accumulate(g);
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Eigen::Index d = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        fail(ErrorKind::shape, "layer_norm_rows: gamma/beta must be 1x" + std::to_string(d));
    }
    const Matrix& xv = x.value();
    Matrix xhat(xv.rows(), d);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        double mu = xv.row(r).mean();
        double var = (xv.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Matrix value = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    value.rowwise() += beta.value().row(0);
    return make(std::move(value), {&x, &gamma, &beta}, [xhat, inv_std](const Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        const Matrix& dy = self.grad;
        if (pg.requires_grad) pg.accumulate(dy.cwiseProduct(xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(dy.colwise().sum());
        if (px.requires_grad) {
            Matrix dxhat = (dy.array().rowwise() * pg.value.row(0).array()).matrix();
            Matrix dx(dy.rows(), dy.cols());
            for (Eigen::Index r = 0; r < dy.rows(); ++r) {
                double m1 = dxhat.row(r).mean();
                double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dy.cols());
                dx.row(r) = ((dxhat.row(r).array() - m1) - xhat.row(r).array() * m2) * inv_std(r);
            }
            px.accumulate(dx);
        }
    });
}

Tensor l2_normalize_rows(const Tensor& a) {
    const Matrix& x = a.value();
    Eigen::VectorXd norms = x.rowwise().norm();
    Matrix value = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (norms(r) > 0.0) {
            value.row(r) = x.row(r) / norms(r);
        }
    }
    return make(std::move(value), {&a}, [norms](const Node& self) {
        const Matrix& y = self.value;
        Matrix g = Matrix::Zero(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            if (norms(r) > 0.0) {
                double dot = y.row(r).dot(self.grad.row(r));
                g.row(r) = (self.grad.row(r) - y.row(r) * dot) / norms(r);
            }
        }
        parent(self, 0).accumulate(g);
    });
}

Tensor sum(const Tensor& a) {
    Matrix value(1, 1);
    value(0, 0) = a.value().sum();
    return make(std::move(value), {&a}, [](const Node& self) {
        Node& p = parent(self, 0);
        p.accumulate(Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Tensor row_sums(const Tensor& a) {
    Matrix value = a.value().rowwise().sum();
    return make(std::move(value), {&a}, [](const Node& self) {
        Node& p = parent(self, 0);
        Matrix g = self.grad.replicate(1, p.value.cols());
        p.accumulate(g);
    });
}

Tensor diagonal(const Tensor& a) {
    require(a.rows() == a.cols(), ErrorKind::shape, "diagonal: square matrix required");
    Matrix value = a.value().diagonal();
    return make(std::move(value), {&a}, [](const Node& self) {
        Node& p = parent(self, 0);
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        g.diagonal() = self.grad.col(0);
        p.accumulate(g);
    });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.rows(), ErrorKind::shape, "slice_rows out of range");
    Matrix value = a.value().middleRows(start, count);
    return make(std::move(value), {&a}, [start, count](const Node& self) {
        Node& p = parent(self, 0);
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        g.middleRows(start, count) = self.grad;
        p.accumulate(g);
    });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorKind::shape, "slice_cols out of range");
    Matrix value = a.value().middleCols(start, count);
    return make(std::move(value), {&a}, [start, count](const Node& self) {
        Node& p = parent(self, 0);
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        g.middleCols(start, count) = self.grad;
        p.accumulate(g);
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
    Matrix value(static_cast<Eigen::Index>(indices.size()), a.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(static_cast<Eigen::Index>(indices[i]) < a.rows(), ErrorKind::shape, "gather_rows index out of range");
        value.row(static_cast<Eigen::Index>(i)) = a.value().row(static_cast<Eigen::Index>(indices[i]));
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make(std::move(value), {&a}, [idx](const Node& self) {
        Node& p = parent(self, 0);
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            g.row(static_cast<Eigen::Index>(idx[i])) += self.grad.row(static_cast<Eigen::Index>(i));
        }
        p.accumulate(g);
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorKind::shape, "concat_rows: no inputs");
    const Eigen::Index cols = parts[0].cols();
    Eigen::Index rows = 0;
    for (const Tensor& t : parts) {
        require(t.cols() == cols, ErrorKind::shape, "concat_rows: width mismatch");
        rows += t.rows();
    }
    Matrix value(rows, cols);
    Eigen::Index offset = 0;
    for (const Tensor& t : parts) {
        value.middleRows(offset, t.rows()) = t.value();
        offset += t.rows();
    }
    return make_many(std::move(value), parts, [](const Node& self) {
        Eigen::Index offset = 0;
        for (const NodePtr& p : self.parents) {
            const Eigen::Index r = p->value.rows();
            if (p->requires_grad) p->accumulate(self.grad.middleRows(offset, r));
            offset += r;
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorKind::shape, "concat_cols: no inputs");
    const Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    for (const Tensor& t : parts) {
        require(t.rows() == rows, ErrorKind::shape, "concat_cols: height mismatch");
        cols += t.cols();
    }
    Matrix value(rows, cols);
    Eigen::Index offset = 0;
    for (const Tensor& t : parts) {
        value.middleCols(offset, t.cols()) = t.value();
        offset += t.cols();
    }
    return make_many(std::move(value), parts, [](const Node& self) {
        Eigen::Index offset = 0;
        for (const NodePtr& p : self.parents) {
            const Eigen::Index c = p->value.cols();
            if (p->requires_grad) p->accumulate(self.grad.middleCols(offset, c));
            offset += c;
        }
    });
}

Tensor replace_rows(const Matrix& base, std::span<const std::size_t> positions, std::span<const Tensor> rows) {
    require(positions.size() == rows.size(), ErrorKind::shape, "replace_rows: positions/rows count mismatch");
    Matrix value = base;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].rows() == 1 && rows[i].cols() == base.cols(), ErrorKind::shape,
                "replace_rows: each row must be 1x" + std::to_string(base.cols()));
        require(static_cast<Eigen::Index>(positions[i]) < base.rows(), ErrorKind::shape,
                "replace_rows: position out of range");
        value.row(static_cast<Eigen::Index>(positions[i])) = rows[i].value().row(0);
    }
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    return make_many(std::move(value), rows, [pos](const Node& self) {
        for (std::size_t i = 0; i < pos.size(); ++i) {
            Node& p = *self.parents[i];
            if (p.requires_grad) p.accumulate(self.grad.row(static_cast<Eigen::Index>(pos[i])));
        }
    });
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "cosine_rows");
    require(a.rows() == 1, ErrorKind::shape, "cosine_rows: row vectors required");
    return sum(mul(l2_normalize_rows(a), l2_normalize_rows(b)));
}

Tensor frobenius_sq(const Tensor& a) { return sum(square(a)); }

}  // namespace fticir::ag
