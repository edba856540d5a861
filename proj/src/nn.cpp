#include "fticir/nn.hpp"

#include <cmath>
#include <limits>

#include "fticir/errors.hpp"

namespace fticir::nn {

std::size_t ParameterList::scalar_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : items_) {
        total += static_cast<std::size_t>(t.value().size());
    }
    return total;
}

Tensor* ParameterList::find(const std::string& name) {
    for (auto& [n, t] : items_) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

void ParameterList::zero_grad() {
    for (auto& [name, t] : items_) {
        t.zero_grad();
    }
}

Tensor dropout(const Tensor& x, double p, const ForwardMode& mode) {
    if (!mode.training || p <= 0.0) {
        return x;
    }
    require(mode.rng != nullptr, ErrorKind::precondition, "dropout in training mode needs an rng");
    Matrix mask(x.rows(), x.cols());
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = mode.rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    return ag::mul_constant(x, mask);
}

Linear Linear::create(int in, int out, Rng& rng, bool trainable) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        w.data()[i] = rng.uniform(-bound, bound);
    }
    Matrix b(1, out);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        b.data()[i] = rng.uniform(-bound, bound);
    }
    return Linear{Tensor::leaf(std::move(w), trainable), Tensor::leaf(std::move(b), trainable)};
}

Tensor Linear::forward(const Tensor& x) const { return ag::add_row(ag::matmul(x, weight), bias); }

void Linear::collect(ParameterList& params, const std::string& prefix) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
}

LayerNorm LayerNorm::create(int width, bool trainable) {
    return LayerNorm{Tensor::leaf(Matrix::Ones(1, width), trainable), Tensor::leaf(Matrix::Zero(1, width), trainable)};
}

Tensor LayerNorm::forward(const Tensor& x) const { return ag::layer_norm_rows(x, gamma, beta); }

void LayerNorm::collect(ParameterList& params, const std::string& prefix) const {
    params.add(prefix + ".gamma", gamma);
    params.add(prefix + ".beta", beta);
}

Mlp Mlp::create(int in, int hidden, int out, int depth, double dropout, Rng& rng, bool trainable) {
    require(depth >= 1, ErrorKind::config, "mlp depth must be >= 1");
    Mlp mlp;
    mlp.dropout = dropout;
    int width = in;
    for (int i = 0; i < depth; ++i) {
        const int next = (i + 1 == depth) ? out : hidden;
        mlp.layers.push_back(Linear::create(width, next, rng, trainable));
        width = next;
    }
    return mlp;
}

Tensor Mlp::forward(const Tensor& x, const ForwardMode& mode) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) {
            h = nn::dropout(ag::gelu(h), dropout, mode);
        }
    }
    return h;
}

void Mlp::collect(ParameterList& params, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(params, prefix + "." + std::to_string(i));
    }
}

SelfAttention SelfAttention::create(int width, int heads, Rng& rng, bool trainable) {
    require(heads >= 1 && width % heads == 0, ErrorKind::config,
            "attention width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    SelfAttention a;
    a.query = Linear::create(width, width, rng, trainable);
    a.key = Linear::create(width, width, rng, trainable);
    a.value = Linear::create(width, width, rng, trainable);
    a.output = Linear::create(width, width, rng, trainable);
    a.heads = heads;
    return a;
}

Tensor SelfAttention::forward(const Tensor& x, const Matrix* mask) const {
    const Eigen::Index width = x.cols();
    const Eigen::Index head_width = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));
    Tensor q = query.forward(x);
    Tensor k = key.forward(x);
    Tensor v = value.forward(x);
    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : ag::slice_cols(q, h * head_width, head_width);
        Tensor kh = heads == 1 ? k : ag::slice_cols(k, h * head_width, head_width);
        Tensor vh = heads == 1 ? v : ag::slice_cols(v, h * head_width, head_width);
        Tensor logits = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt);
        if (mask != nullptr) {
            logits = ag::add_constant(logits, *mask);
        }
        outputs.push_back(ag::matmul(ag::softmax_rows(logits), vh));
    }
    Tensor merged = heads == 1 ? outputs.front() : ag::concat_cols(outputs);
    return output.forward(merged);
}

void SelfAttention::collect(ParameterList& params, const std::string& prefix) const {
    query.collect(params, prefix + ".query");
    key.collect(params, prefix + ".key");
    value.collect(params, prefix + ".value");
    output.collect(params, prefix + ".output");
}

TransformerLayer TransformerLayer::create(int width, int heads, int ff_width, bool pre_norm, Rng& rng,
                                          bool trainable) {
    TransformerLayer layer;
    layer.attention = SelfAttention::create(width, heads, rng, trainable);
    layer.norm1 = LayerNorm::create(width, trainable);
    layer.norm2 = LayerNorm::create(width, trainable);
    layer.ff1 = Linear::create(width, ff_width, rng, trainable);
    layer.ff2 = Linear::create(ff_width, width, rng, trainable);
    layer.pre_norm = pre_norm;
    return layer;
}

Tensor TransformerLayer::forward(const Tensor& x, const Matrix* mask) const {
    if (pre_norm) {
        Tensor h = ag::add(x, attention.forward(norm1.forward(x), mask));
        return ag::add(h, ff2.forward(ag::gelu(ff1.forward(norm2.forward(h)))));
    }
    Tensor h = norm1.forward(ag::add(x, attention.forward(x, mask)));
    return norm2.forward(ag::add(h, ff2.forward(ag::gelu(ff1.forward(h)))));
}

void TransformerLayer::collect(ParameterList& params, const std::string& prefix) const {
    attention.collect(params, prefix + ".attn");
    norm1.collect(params, prefix + ".norm1");
    norm2.collect(params, prefix + ".norm2");
    ff1.collect(params, prefix + ".ff1");
    ff2.collect(params, prefix + ".ff2");
}

TransformerEncoder TransformerEncoder::create(int width, int heads, int depth, int ff_width, bool pre_norm,
                                              Rng& rng, bool trainable) {
    require(depth >= 0, ErrorKind::config, "transformer depth must be >= 0");
    TransformerEncoder enc;
    for (int i = 0; i < depth; ++i) {
        enc.layers.push_back(TransformerLayer::create(width, heads, ff_width, pre_norm, rng, trainable));
    }
    return enc;
}

Tensor TransformerEncoder::forward(const Tensor& x, const Matrix* mask) const {
    Tensor h = x;
    for (const TransformerLayer& layer : layers) {
        h = layer.forward(h, mask);
    }
    return h;
}

void TransformerEncoder::collect(ParameterList& params, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(params, prefix + ".layers." + std::to_string(i));
    }
}

Matrix causal_mask(Eigen::Index length) {
    Matrix mask = Matrix::Zero(length, length);
    for (Eigen::Index r = 0; r < length; ++r) {
        for (Eigen::Index c = r + 1; c < length; ++c) {
            mask(r, c) = -1e30;
        }
    }
    return mask;
}

}  // namespace fticir::nn
