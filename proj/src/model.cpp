#include "fticir/model.hpp"

#include <algorithm>

#include "fticir/binio.hpp"
#include "fticir/errors.hpp"
#include "fticir/image.hpp"

namespace fticir {

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'T', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 1;

const char* const kAblationNames[] = {
    "no_filter",        "no_ortho",         "no_context_reg",   "no_subject_reg",
    "no_attribute_reg", "no_whole_reg",     "no_subject_token", "no_attribute_token",
};

bool* ablation_field(Ablations& a, std::string_view name) {
    if (name == "no_filter") return &a.no_filter;
    if (name == "no_ortho") return &a.no_ortho;
    if (name == "no_context_reg") return &a.no_context_reg;
    if (name == "no_subject_reg") return &a.no_subject_reg;
    if (name == "no_attribute_reg") return &a.no_attribute_reg;
    if (name == "no_whole_reg") return &a.no_whole_reg;
    if (name == "no_subject_token") return &a.no_subject_token;
    if (name == "no_attribute_token") return &a.no_attribute_token;
    return nullptr;
}

void put_matrix(binio::Writer& w, const Eigen::MatrixXd& m) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) w.put<double>(m(r, c));
    }
}

Eigen::MatrixXd get_matrix(binio::Reader& r) {
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols * sizeof(double) > r.remaining()) {
        fail(ErrorKind::parse, r.source() + ": implausible matrix shape " + std::to_string(rows) + "x" +
                                   std::to_string(cols));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
    }
    return m;
}

InversionConfig inversion_config(const Config& cfg) { return InversionConfig::from_config(cfg); }

}  // namespace

Ablations Ablations::parse(const std::vector<std::string>& names) {
    Ablations a;
    for (const std::string& name : names) {
        bool* field = ablation_field(a, name);
        require(field != nullptr, ErrorKind::config, "unknown ablation flag " + name);
        *field = true;
    }
    return a;
}

std::vector<std::string> Ablations::names() const {
    std::vector<std::string> out;
    Ablations copy = *this;
    for (const char* name : kAblationNames) {
        if (*ablation_field(copy, name)) out.emplace_back(name);
    }
    return out;
}

std::string Ablations::to_string() const {
    std::string out;
    for (const std::string& n : names()) {
        if (!out.empty()) out += ',';
        out += n;
    }
    return out;
}

TemplateOptions Ablations::templates() const {
    TemplateOptions t;
    t.no_context_reg = no_context_reg;
    t.no_subject_token = no_subject_token;
    t.no_attribute_token = no_attribute_token;
    return t;
}

FilterConfig Ablations::effective_filter(const FilterConfig& filter, int n_attrs) const {
    if (!no_filter) return filter;
    return FilterConfig{n_attrs, -1.0};
}

Model::Model(const Config& config)
    : config_(config),
      backbone_(BackboneConfig::from_config(config)),
      ablations_(Ablations::parse(config.get_list("train.ablations"))),
      filter_(ablations_.effective_filter(inversion_config(config).filter, inversion_config(config).n_attrs)),
      network_(inversion_config(config), backbone_) {
    require(!(ablations_.no_subject_token && ablations_.no_attribute_token), ErrorKind::config,
            "no_subject_token and no_attribute_token together leave no pseudo-word");
}

PseudoTokens Model::invert(const ImageFeatures& features, const nn::ForwardMode& mode) const {
    return network_.invert(features, filter_, mode);
}

TokenSequence Model::image_sentence(const Backbone& backbone, const PseudoTokens& tokens) const {
    const TemplateOptions opts = templates();
    return render_template(backbone, image_template_text(tokens.r(), opts),
                           template_vectors(tokens.subject, tokens.attribute_rows(), opts));
}

Eigen::RowVectorXd Model::image_embedding(const Backbone& backbone, const ImageFeatures& features) const {
    ag::NoGradGuard guard;
    return backbone.encode_text_value(image_sentence(backbone, invert(features)));
}

Model::Query Model::compose(const Backbone& backbone, const ImageFeatures& features,
                            std::string_view modification) const {
    ag::NoGradGuard guard;
    const PseudoTokens tokens = invert(features);
    QueryTemplate q = query_template(backbone, tokens.subject, tokens.attribute_rows(), modification, templates());
    Query out;
    out.text = q.text;
    out.truncated = q.truncated;
    out.warning = q.warning;
    out.r = tokens.r();
    out.embedding = backbone.encode_text_value(q.tokens);
    return out;
}

std::vector<NamedArray> Model::export_parameters() const {
    std::vector<NamedArray> out;
    const nn::ParameterList list = network_.parameters();
    for (const auto& [name, tensor] : list.items()) out.push_back({name, tensor.value()});
    return out;
}

void Model::import_parameters(const std::vector<NamedArray>& params) {
    nn::ParameterList list = network_.parameters();
    require(params.size() == list.size(), ErrorKind::data,
            "checkpoint holds " + std::to_string(params.size()) + " parameters, model expects " +
                std::to_string(list.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, tensor] = list.items()[i];
        const NamedArray& p = params[i];
        require(p.name == name, ErrorKind::data, "checkpoint parameter " + p.name + " where " + name + " was expected");
        require(p.value.rows() == tensor.rows() && p.value.cols() == tensor.cols(), ErrorKind::data,
                "checkpoint parameter " + name + " has the wrong shape");
        tensor.mutable_value() = p.value;
    }
}

void Model::check_backbone(const Backbone& backbone) const {
    const BackboneConfig& b = backbone.config();
    const bool same = b.d_embed == backbone_.d_embed && b.d_patch == backbone_.d_patch &&
                      b.m_patches == backbone_.m_patches && b.d_token == backbone_.d_token;
    require(same, ErrorKind::config, "backbone dims do not match the model snapshot (backbone " + b.name + ")");
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    binio::Writer w;
    w.put_bytes(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put_string(config.serialize());
    w.put<std::uint64_t>(step);
    w.put<std::uint32_t>(epoch);
    w.put<std::uint64_t>(epoch_offset);
    w.put<std::uint64_t>(order.size());
    for (std::uint64_t v : order) w.put<std::uint64_t>(v);
    w.put_string(rng_state);
    w.put<std::uint64_t>(backbone_fingerprint);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const NamedArray& p : params) {
        w.put_string(p.name);
        w.put<std::uint8_t>(kDtypeF64);
        put_matrix(w, p.value);
    }
    w.put<std::uint64_t>(adam_step);
    require(adam_m.size() == adam_v.size(), ErrorKind::data, "optimizer moment lists differ in length");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(adam_m.size()));
    for (std::size_t i = 0; i < adam_m.size(); ++i) {
        put_matrix(w, adam_m[i]);
        put_matrix(w, adam_v[i]);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r_histogram.size()));
    for (std::uint64_t v : r_histogram) w.put<std::uint64_t>(v);
    const std::uint64_t digest =
        fnv1a64(std::string_view(reinterpret_cast<const char*>(w.bytes().data()), w.bytes().size()));
    w.put<std::uint64_t>(digest);
    return std::move(w.bytes());
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes, const std::string& source) {
    require(bytes.size() >= 16 && std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin()), ErrorKind::parse,
            source + ": not a checkpoint file");
    const std::span<const std::uint8_t> body = bytes.first(bytes.size() - 8);
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    require(fnv1a64(std::string_view(reinterpret_cast<const char*>(body.data()), body.size())) == stored,
            ErrorKind::parse, source + ": checkpoint checksum mismatch");

    binio::Reader r(body, source);
    r.take(4);
    const auto version = r.get<std::uint32_t>();
    require(version == kCheckpointVersion, ErrorKind::parse,
            source + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.config = Config::parse(r.get_string(), source + " (config)");
    ck.step = r.get<std::uint64_t>();
    ck.epoch = r.get<std::uint32_t>();
    ck.epoch_offset = r.get<std::uint64_t>();
    const auto order_count = r.get<std::uint64_t>();
    require(order_count * 8 <= r.remaining(), ErrorKind::parse, source + ": bad order length");
    ck.order.resize(order_count);
    for (auto& v : ck.order) v = r.get<std::uint64_t>();
    ck.rng_state = r.get_string();
    ck.backbone_fingerprint = r.get<std::uint64_t>();
    const auto n_params = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        NamedArray p;
        p.name = r.get_string();
        const auto dtype = r.get<std::uint8_t>();
        require(dtype == kDtypeF64, ErrorKind::parse, source + ": parameter " + p.name + " has unknown dtype");
        p.value = get_matrix(r);
        ck.params.push_back(std::move(p));
    }
    ck.adam_step = r.get<std::uint64_t>();
    const auto n_moments = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_moments; ++i) {
        ck.adam_m.push_back(get_matrix(r));
        ck.adam_v.push_back(get_matrix(r));
    }
    const auto hist = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < hist; ++i) ck.r_histogram.push_back(r.get<std::uint64_t>());
    require(r.remaining() == 0, ErrorKind::parse, source + ": trailing bytes after checkpoint");
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const std::vector<std::uint8_t> bytes = serialize();
    write_file_atomic(path, bytes);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    return deserialize(bytes, path.string());
}

Model load_model(const Checkpoint& checkpoint) {
    Model model(checkpoint.config);
    model.import_parameters(checkpoint.params);
    return model;
}

Model load_model(const std::filesystem::path& checkpoint_path) { return load_model(Checkpoint::load(checkpoint_path)); }

}  // namespace fticir
