#pragma once

// Trainable fine-grained textual inversion: one subject-oriented pseudo token
// from the global feature, r attribute-oriented pseudo tokens from
// query-pooled patch features that survive local-global relevance filtering.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fticir/autograd.hpp"
#include "fticir/backbone.hpp"
#include "fticir/config.hpp"
#include "fticir/nn.hpp"

namespace fticir {

struct FilterConfig {
    int k = 12;
    double epsilon = 0.05;

    void validate(int n_attrs) const;
};

struct InversionConfig {
    int n_attrs = 24;
    int transformer_layers = 3;
    int transformer_heads = 1;
    int mlp_depth = 3;
    int mlp_hidden_mult = 4;
    double dropout = 0.1;
    std::uint64_t seed = 42;
    FilterConfig filter;

    static InversionConfig from_config(const Config& cfg);
    void to_config(Config& cfg) const;
    void validate(const BackboneConfig& backbone) const;
};

// cos(a, b) with cos(x, 0) = 0.
double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b);

struct FilterSelection {
    Eigen::VectorXd sims;                   // n, c_i
    std::vector<std::size_t> topk;          // k row indices, descending similarity, ties by index
    std::vector<std::size_t> retained;      // subset of topk in topk order
    bool fallback = false;                  // no row passed the threshold
};

FilterSelection select_attributes(const Eigen::MatrixXd& local, const Eigen::RowVectorXd& global,
                                  const FilterConfig& cfg);

struct FilteredAttributes {
    Eigen::VectorXd sims;             // C
    Eigen::MatrixXd topk_features;    // W, k x d_embed
    Eigen::MatrixXd retained_features;  // W', r x d_embed
    FilterSelection selection;

    std::size_t r() const { return selection.retained.size(); }
};

FilteredAttributes filter_attributes(const Eigen::MatrixXd& local, const Eigen::RowVectorXd& global,
                                     const FilterConfig& cfg);

struct PseudoTokens {
    ag::Tensor subject;            // 1 x d_token
    ag::Tensor attributes;         // r x d_token
    ag::Tensor topk_features;      // k x d_embed (W)
    ag::Tensor retained_features;  // r x d_embed (W')
    FilterSelection selection;

    std::size_t r() const { return selection.retained.size(); }
    std::vector<ag::Tensor> attribute_rows() const;
};

class InversionNetwork {
public:
    InversionNetwork(const InversionConfig& config, const BackboneConfig& backbone);

    const InversionConfig& config() const { return config_; }
    const BackboneConfig& backbone_config() const { return backbone_; }

    ag::Tensor map_subject(const ag::Tensor& global, const nn::ForwardMode& mode = {}) const;
    ag::Tensor extract_local_attributes(const ag::Tensor& patches, const nn::ForwardMode& mode = {}) const;
    ag::Tensor map_attributes(const ag::Tensor& retained, const nn::ForwardMode& mode = {}) const;

    PseudoTokens invert(const ImageFeatures& features, const nn::ForwardMode& mode = {}) const;
    PseudoTokens invert(const ImageFeatures& features, const FilterConfig& filter, const nn::ForwardMode& mode) const;

    // Trainable leaves, stable order.
    nn::ParameterList parameters() const;
    const ag::Tensor& query_bank() const { return queries_; }

private:
    InversionConfig config_;
    BackboneConfig backbone_;
    nn::Mlp subject_mapper_;
    ag::Tensor queries_;  // n x d_patch
    nn::TransformerEncoder attribute_encoder_;
    nn::Linear attribute_fc_;
    nn::Mlp attribute_mapper_;
};

}  // namespace fticir
