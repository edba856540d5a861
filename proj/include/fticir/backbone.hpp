#pragma once

// Frozen dual-encoder abstraction: image tower, text tower with pseudo-token
// injection, tokenizer, and the caption source used during training.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fticir/autograd.hpp"
#include "fticir/config.hpp"
#include "fticir/image.hpp"

namespace fticir {

// Surface form of a pseudo-word placeholder inside template strings.
inline constexpr std::string_view kPlaceholder = "\xE2\x9F\xA8P\xE2\x9F\xA9";  // ⟨P⟩

struct BackboneConfig {
    std::string name = "toy";  // "toy" or "plugin:<path to shared library>"
    int d_embed = 32;          // joint embedding width
    int d_patch = 48;          // patch feature width
    int m_patches = 16;
    int d_token = 32;  // token embedding width of the text tower
    int max_text_len = 40;
    std::uint64_t seed = 20240711;
    int text_layers = 2;
    int text_heads = 2;

    static BackboneConfig from_config(const Config& cfg);
    void to_config(Config& cfg) const;
    void validate() const;
};

struct ImageFeatures {
    Eigen::RowVectorXd global;  // d_embed
    Eigen::MatrixXd patches;    // m_patches x d_patch, no class-token row
};

struct PseudoSlot {
    std::size_t position = 0;
    ag::Tensor vector;  // 1 x d_token; undefined until bound
};

struct TokenSequence {
    std::vector<int> ids;  // includes begin/end markers
    std::vector<PseudoSlot> slots;

    std::size_t size() const { return ids.size(); }
};

// Binds vectors to the slots of `tokens` in order. Count must match.
TokenSequence bind_pseudo(TokenSequence tokens, const std::vector<ag::Tensor>& vectors);

class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneConfig& config() const = 0;

    virtual ImageFeatures encode_image(const Image& image) const = 0;

    // Placeholder literals become slots with unbound vectors. Throws
    // ErrorKind::input when the result exceeds max_text_len.
    virtual TokenSequence tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(const TokenSequence& tokens) const = 0;

    // 1 x d_embed, differentiable w.r.t. the bound slot vectors only.
    virtual ag::Tensor encode_text(const TokenSequence& tokens) const = 0;

    // Digest of all frozen weights; used to check the frozen contract.
    virtual std::uint64_t weights_fingerprint() const = 0;

    Eigen::RowVectorXd encode_text_value(const TokenSequence& tokens) const;
    Eigen::RowVectorXd encode_text_value(std::string_view text) const;
};

// Dispatches on config.name.
std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config);

class ToyTokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBegin = 1;
    static constexpr int kEnd = 2;
    static constexpr int kPlaceholderId = 3;
    static constexpr int kOovBuckets = 1024;

    ToyTokenizer();

    // Without begin/end markers; `pieces` receives surface strings if given.
    std::vector<int> encode_words(std::string_view text) const;
    std::string piece(int id) const;
    int vocab_size() const { return static_cast<int>(pieces_.size()) + kOovBuckets; }
    bool is_known(std::string_view word) const { return index_.count(std::string(word)) != 0; }

private:
    std::vector<std::string> pieces_;
    std::map<std::string, int, std::less<>> index_;
};

// Small seeded encoders with the frozen-backbone contract. The image tower
// pools a grid of colour cells; patch features and the global feature come
// from two independent seeded projections.
class ToyBackbone final : public Backbone {
public:
    explicit ToyBackbone(BackboneConfig config);

    const BackboneConfig& config() const override { return config_; }
    ImageFeatures encode_image(const Image& image) const override;
    TokenSequence tokenize(std::string_view text) const override;
    std::string detokenize(const TokenSequence& tokens) const override;
    ag::Tensor encode_text(const TokenSequence& tokens) const override;
    std::uint64_t weights_fingerprint() const override;

    const ToyTokenizer& tokenizer() const { return tokenizer_; }

private:
    struct Weights;
    BackboneConfig config_;
    ToyTokenizer tokenizer_;
    std::shared_ptr<const Weights> weights_;
};

// Loads a shared library exporting the C ABI in fticir/plugin_abi.h.
std::unique_ptr<Backbone> load_plugin_backbone(const std::filesystem::path& library, const BackboneConfig& config);

class CaptionSource {
public:
    virtual ~CaptionSource() = default;
    // Throws ErrorKind::lookup naming the id when absent.
    virtual std::string caption(const std::string& image_id) const = 0;
};

// `id<TAB>caption` per line, UTF-8.
class CaptionFile final : public CaptionSource {
public:
    static CaptionFile load(const std::filesystem::path& path);
    static CaptionFile parse(std::string_view text, std::string_view source = "<string>");

    std::string caption(const std::string& image_id) const override;
    bool contains(const std::string& image_id) const { return captions_.count(image_id) != 0; }
    std::vector<std::string> ids() const;
    std::size_t size() const { return captions_.size(); }

    void add(std::string id, std::string caption);
    std::string serialize() const;

private:
    std::map<std::string, std::string> captions_;
};

}  // namespace fticir
