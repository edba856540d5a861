#pragma once

// Layers shared by the trainable inversion network and the frozen toy towers.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fticir/autograd.hpp"
#include "fticir/rng.hpp"

namespace fticir::nn {

using ag::Matrix;
using ag::Tensor;

// Named, ordered view of trainable leaves. Order is stable and defines the
// checkpoint layout and the optimizer state layout.
class ParameterList {
public:
    void add(std::string name, Tensor tensor) { items_.emplace_back(std::move(name), std::move(tensor)); }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t scalar_count() const;

    Tensor* find(const std::string& name);
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct ForwardMode {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout
};

Tensor dropout(const Tensor& x, double p, const ForwardMode& mode);

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out

    static Linear create(int in, int out, Rng& rng, bool trainable);
    Tensor forward(const Tensor& x) const;
    void collect(ParameterList& params, const std::string& prefix) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    static LayerNorm create(int width, bool trainable);
    Tensor forward(const Tensor& x) const;
    void collect(ParameterList& params, const std::string& prefix) const;
};

// Linear layers with GELU between them; dropout after each activation in
// training mode.
struct Mlp {
    std::vector<Linear> layers;
    double dropout = 0.0;

    static Mlp create(int in, int hidden, int out, int depth, double dropout, Rng& rng, bool trainable);
    Tensor forward(const Tensor& x, const ForwardMode& mode) const;
    void collect(ParameterList& params, const std::string& prefix) const;
};

struct SelfAttention {
    Linear query, key, value, output;
    int heads = 1;

    static SelfAttention create(int width, int heads, Rng& rng, bool trainable);
    // `mask` is added to the attention logits (use -inf style large negatives).
    Tensor forward(const Tensor& x, const Matrix* mask) const;
    void collect(ParameterList& params, const std::string& prefix) const;
};

struct TransformerLayer {
    SelfAttention attention;
    LayerNorm norm1, norm2;
    Linear ff1, ff2;
    bool pre_norm = false;

    static TransformerLayer create(int width, int heads, int ff_width, bool pre_norm, Rng& rng, bool trainable);
    Tensor forward(const Tensor& x, const Matrix* mask) const;
    void collect(ParameterList& params, const std::string& prefix) const;
};

struct TransformerEncoder {
    std::vector<TransformerLayer> layers;

    static TransformerEncoder create(int width, int heads, int depth, int ff_width, bool pre_norm, Rng& rng,
                                     bool trainable);
    // Zero layers is the identity.
    Tensor forward(const Tensor& x, const Matrix* mask = nullptr) const;
    void collect(ParameterList& params, const std::string& prefix) const;
};

Matrix causal_mask(Eigen::Index length);

}  // namespace fticir::nn
