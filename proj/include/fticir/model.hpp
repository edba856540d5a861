#pragma once

// A configured inversion network plus what it needs at inference time
// (effective filter, template variant), and the checkpoint archive.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fticir/backbone.hpp"
#include "fticir/config.hpp"
#include "fticir/inversion.hpp"
#include "fticir/textgen.hpp"

namespace fticir {

struct Ablations {
    bool no_filter = false;
    bool no_ortho = false;
    bool no_context_reg = false;
    bool no_subject_reg = false;
    bool no_attribute_reg = false;
    bool no_whole_reg = false;
    bool no_subject_token = false;
    bool no_attribute_token = false;

    // Unknown names are config errors.
    static Ablations parse(const std::vector<std::string>& names);
    std::vector<std::string> names() const;
    std::string to_string() const;  // comma-joined

    TemplateOptions templates() const;
    // no_filter: k = n and a threshold no cosine can fail.
    FilterConfig effective_filter(const FilterConfig& filter, int n_attrs) const;

    bool use_subject_loss() const { return !no_subject_reg && !no_subject_token; }
    bool use_attribute_loss() const { return !no_attribute_reg && !no_attribute_token; }
    bool use_whole_loss() const { return !no_whole_reg; }
};

struct NamedArray {
    std::string name;
    Eigen::MatrixXd value;
};

class Model {
public:
    // Fresh, seed-initialised network from a config snapshot.
    explicit Model(const Config& config);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const Config& config() const { return config_; }
    const BackboneConfig& backbone_config() const { return backbone_; }
    const Ablations& ablations() const { return ablations_; }
    const FilterConfig& filter() const { return filter_; }
    TemplateOptions templates() const { return ablations_.templates(); }

    InversionNetwork& network() { return network_; }
    const InversionNetwork& network() const { return network_; }

    PseudoTokens invert(const ImageFeatures& features, const nn::ForwardMode& mode = {}) const;

    // Pseudo-word sentence of the image ("a photo of S* with A_1* ... A_r*.").
    TokenSequence image_sentence(const Backbone& backbone, const PseudoTokens& tokens) const;
    Eigen::RowVectorXd image_embedding(const Backbone& backbone, const ImageFeatures& features) const;

    struct Query {
        std::string text;
        bool truncated = false;
        std::string warning;
        std::size_t r = 0;
        Eigen::RowVectorXd embedding;
    };
    Query compose(const Backbone& backbone, const ImageFeatures& features, std::string_view modification) const;

    std::vector<NamedArray> export_parameters() const;
    // Names and shapes must match exactly.
    void import_parameters(const std::vector<NamedArray>& params);

    // Fails with a config error when `backbone` does not have the snapshot's dims.
    void check_backbone(const Backbone& backbone) const;

private:
    Config config_;
    BackboneConfig backbone_;
    Ablations ablations_;
    FilterConfig filter_;
    InversionNetwork network_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Config config;
    std::uint64_t step = 0;          // optimizer steps taken
    std::uint32_t epoch = 0;         // 0-based epoch in progress
    std::uint64_t epoch_offset = 0;  // samples of `order` already consumed
    std::vector<std::uint64_t> order;
    std::string rng_state;
    std::uint64_t backbone_fingerprint = 0;
    std::vector<NamedArray> params;
    std::uint64_t adam_step = 0;
    std::vector<Eigen::MatrixXd> adam_m;
    std::vector<Eigen::MatrixXd> adam_v;
    std::vector<std::uint64_t> r_histogram;  // index r - 1

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(std::span<const std::uint8_t> bytes, const std::string& source = "<bytes>");
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

// Model with the checkpoint's parameters.
Model load_model(const Checkpoint& checkpoint);
Model load_model(const std::filesystem::path& checkpoint_path);

}  // namespace fticir
