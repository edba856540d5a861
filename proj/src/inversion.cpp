#include "fticir/inversion.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "fticir/errors.hpp"

namespace fticir {

void FilterConfig::validate(int n_attrs) const {
    require(k >= 1 && k <= n_attrs, ErrorKind::config,
            "filter.k must satisfy 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n_attrs) + ")");
    require(epsilon >= -1.0 && epsilon <= 1.0, ErrorKind::config, "filter.epsilon must lie in [-1, 1]");
}

InversionConfig InversionConfig::from_config(const Config& cfg) {
    InversionConfig c;
    c.n_attrs = static_cast<int>(cfg.get_int("model.n_attrs", c.n_attrs));
    c.transformer_layers = static_cast<int>(cfg.get_int("model.transformer_layers", c.transformer_layers));
    c.transformer_heads = static_cast<int>(cfg.get_int("model.transformer_heads", c.transformer_heads));
    c.mlp_depth = static_cast<int>(cfg.get_int("model.mlp_depth", c.mlp_depth));
    c.mlp_hidden_mult = static_cast<int>(cfg.get_int("model.mlp_hidden_mult", c.mlp_hidden_mult));
    c.dropout = cfg.get_double("model.dropout", c.dropout);
    c.seed = static_cast<std::uint64_t>(cfg.get_int("model.seed", static_cast<long long>(c.seed)));
    c.filter.k = static_cast<int>(cfg.get_int("filter.k", c.filter.k));
    c.filter.epsilon = cfg.get_double("filter.epsilon", c.filter.epsilon);
    return c;
}

void InversionConfig::to_config(Config& cfg) const {
    cfg.set("model.n_attrs", std::to_string(n_attrs));
    cfg.set("model.transformer_layers", std::to_string(transformer_layers));
    cfg.set("model.transformer_heads", std::to_string(transformer_heads));
    cfg.set("model.mlp_depth", std::to_string(mlp_depth));
    cfg.set("model.mlp_hidden_mult", std::to_string(mlp_hidden_mult));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", dropout);
    cfg.set("model.dropout", buf);
    cfg.set("model.seed", std::to_string(seed));
    cfg.set("filter.k", std::to_string(filter.k));
    std::snprintf(buf, sizeof(buf), "%.17g", filter.epsilon);
    cfg.set("filter.epsilon", buf);
}

void InversionConfig::validate(const BackboneConfig& backbone) const {
    require(n_attrs >= 1, ErrorKind::config, "model.n_attrs must be >= 1");
    require(transformer_layers >= 0, ErrorKind::config, "model.transformer_layers must be >= 0");
    require(transformer_heads >= 1 && backbone.d_patch % transformer_heads == 0, ErrorKind::config,
            "model.transformer_heads must divide backbone.d_patch");
    require(mlp_depth >= 1 && mlp_hidden_mult >= 1, ErrorKind::config, "mlp depth and width multiplier must be >= 1");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::config, "model.dropout must lie in [0, 1)");
    filter.validate(n_attrs);
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return a.dot(b) / (na * nb);
}

FilterSelection select_attributes(const Eigen::MatrixXd& local, const Eigen::RowVectorXd& global,
                                  const FilterConfig& cfg) {
    require(local.cols() == global.size(), ErrorKind::shape, "filter: attribute width != global width");
    const auto n = static_cast<std::size_t>(local.rows());
    cfg.validate(static_cast<int>(n));
    FilterSelection sel;
    sel.sims.resize(local.rows());
    for (Eigen::Index i = 0; i < local.rows(); ++i) {
        sel.sims(i) = cosine(local.row(i), global);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sel.sims(Eigen::Index(a)) > sel.sims(Eigen::Index(b)); });
    sel.topk.assign(order.begin(), order.begin() + cfg.k);
    for (std::size_t idx : sel.topk) {
        if (sel.sims(static_cast<Eigen::Index>(idx)) >= cfg.epsilon) {
            sel.retained.push_back(idx);
        }
    }
    if (sel.retained.empty()) {
        sel.retained.push_back(sel.topk.front());
        sel.fallback = true;
    }
    return sel;
}

FilteredAttributes filter_attributes(const Eigen::MatrixXd& local, const Eigen::RowVectorXd& global,
                                     const FilterConfig& cfg) {
    FilteredAttributes out;
    out.selection = select_attributes(local, global, cfg);
    out.sims = out.selection.sims;
    out.topk_features.resize(static_cast<Eigen::Index>(out.selection.topk.size()), local.cols());
    for (std::size_t i = 0; i < out.selection.topk.size(); ++i) {
        out.topk_features.row(Eigen::Index(i)) = local.row(Eigen::Index(out.selection.topk[i]));
    }
    out.retained_features.resize(static_cast<Eigen::Index>(out.selection.retained.size()), local.cols());
    for (std::size_t i = 0; i < out.selection.retained.size(); ++i) {
        out.retained_features.row(Eigen::Index(i)) = local.row(Eigen::Index(out.selection.retained[i]));
    }
    return out;
}

std::vector<ag::Tensor> PseudoTokens::attribute_rows() const {
    std::vector<ag::Tensor> rows;
    rows.reserve(r());
    for (std::size_t i = 0; i < r(); ++i) {
        rows.push_back(ag::slice_rows(attributes, static_cast<Eigen::Index>(i), 1));
    }
    return rows;
}

InversionNetwork::InversionNetwork(const InversionConfig& config, const BackboneConfig& backbone)
    : config_(config), backbone_(backbone) {
    config_.validate(backbone_);
    Rng rng(config_.seed);
    const int d_embed = backbone_.d_embed;
    const int d_patch = backbone_.d_patch;
    const int d_token = backbone_.d_token;
    subject_mapper_ = nn::Mlp::create(d_embed, config_.mlp_hidden_mult * d_embed, d_token, config_.mlp_depth,
                                      config_.dropout, rng, true);
    Eigen::MatrixXd q(config_.n_attrs, d_patch);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
    queries_ = ag::Tensor::leaf(std::move(q), true);
    attribute_encoder_ = nn::TransformerEncoder::create(d_patch, config_.transformer_heads, config_.transformer_layers,
                                                        4 * d_patch, /*pre_norm=*/false, rng, true);
    attribute_fc_ = nn::Linear::create(d_patch, d_embed, rng, true);
    attribute_mapper_ = nn::Mlp::create(d_embed, config_.mlp_hidden_mult * d_embed, d_token, config_.mlp_depth,
                                        config_.dropout, rng, true);
}

ag::Tensor InversionNetwork::map_subject(const ag::Tensor& global, const nn::ForwardMode& mode) const {
    require(global.cols() == backbone_.d_embed, ErrorKind::shape,
            "map_subject: expected width d_embed=" + std::to_string(backbone_.d_embed));
    return subject_mapper_.forward(global, mode);
}

ag::Tensor InversionNetwork::extract_local_attributes(const ag::Tensor& patches, const nn::ForwardMode&) const {
    require(patches.cols() == queries_.cols(), ErrorKind::shape,
            "extract_local_attributes: patch width " + std::to_string(patches.cols()) + " != query width " +
                std::to_string(queries_.cols()));
    const std::vector<ag::Tensor> parts{queries_, patches};
    ag::Tensor encoded = attribute_encoder_.forward(ag::concat_rows(parts));
    ag::Tensor query_rows = ag::slice_rows(encoded, 0, queries_.rows());
    return attribute_fc_.forward(query_rows);
}

ag::Tensor InversionNetwork::map_attributes(const ag::Tensor& retained, const nn::ForwardMode& mode) const {
    require(retained.rows() >= 1, ErrorKind::shape, "map_attributes: need at least one retained feature");
    require(retained.cols() == backbone_.d_embed, ErrorKind::shape,
            "map_attributes: expected width d_embed=" + std::to_string(backbone_.d_embed));
    return attribute_mapper_.forward(retained, mode);
}

PseudoTokens InversionNetwork::invert(const ImageFeatures& features, const nn::ForwardMode& mode) const {
    return invert(features, config_.filter, mode);
}

PseudoTokens InversionNetwork::invert(const ImageFeatures& features, const FilterConfig& filter,
                                      const nn::ForwardMode& mode) const {
    require(features.global.size() == backbone_.d_embed, ErrorKind::shape, "invert: global feature width mismatch");
    require(features.patches.rows() == backbone_.m_patches && features.patches.cols() == backbone_.d_patch,
            ErrorKind::shape, "invert: patch matrix shape mismatch");
    const ag::Tensor global = ag::Tensor::constant(features.global);
    const ag::Tensor patches = ag::Tensor::constant(features.patches);

    PseudoTokens out;
    out.subject = map_subject(global, mode);
    ag::Tensor local = extract_local_attributes(patches, mode);
    out.selection = select_attributes(local.value(), features.global, filter);
    out.topk_features = ag::gather_rows(local, out.selection.topk);
    out.retained_features = ag::gather_rows(local, out.selection.retained);
    out.attributes = map_attributes(out.retained_features, mode);
    return out;
}

nn::ParameterList InversionNetwork::parameters() const {
    nn::ParameterList params;
    subject_mapper_.collect(params, "subject_mapper");
    params.add("attribute.queries", queries_);
    attribute_encoder_.collect(params, "attribute.encoder");
    attribute_fc_.collect(params, "attribute.fc");
    attribute_mapper_.collect(params, "attribute_mapper");
    return params;
}

}  // namespace fticir
