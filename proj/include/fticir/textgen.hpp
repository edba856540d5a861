#pragma once

// Caption splitting and the pseudo-word / real-word prompt templates.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fticir/autograd.hpp"
#include "fticir/backbone.hpp"

namespace fticir {

enum class PosTag { noun, verb, adj, adv, det, num, prep, pron, conj, punct, other };

std::string_view to_string(PosTag tag);
PosTag parse_pos_tag(std::string_view name);

class Tagger {
public:
    virtual ~Tagger() = default;
    virtual std::vector<PosTag> tag(const std::vector<std::string>& words) const = 0;
};

// Closed lexicon plus suffix rules for unknown words: -ing/-ed verb, -ly
// adverb, anything else a noun.
class LexiconTagger final : public Tagger {
public:
    LexiconTagger();
    std::vector<PosTag> tag(const std::vector<std::string>& words) const override;
    PosTag tag_word(std::string_view word) const;

private:
    std::map<std::string, PosTag, std::less<>> lexicon_;
};

// Adapter for an external tagger: either a word -> tag table (one
// `word<TAB>TAG` per line) or a callable. Words missing from the table go to
// the fallback tagger.
class ExternalTagger final : public Tagger {
public:
    using Fn = std::function<std::vector<PosTag>(const std::vector<std::string>&)>;

    explicit ExternalTagger(Fn fn);
    static ExternalTagger from_table(std::map<std::string, PosTag> table, std::shared_ptr<const Tagger> fallback);
    static ExternalTagger load_table(const std::filesystem::path& path, std::shared_ptr<const Tagger> fallback);

    std::vector<PosTag> tag(const std::vector<std::string>& words) const override;

private:
    Fn fn_;
};

struct CaptionSplit {
    std::string full;  // lowercased, whitespace-normalized, trailing period removed
    std::string subj;
    std::string attr;  // may be empty
};

// Lowercase, collapse whitespace, drop trailing periods.
std::string normalize_caption(std::string_view caption);

CaptionSplit split_caption(std::string_view caption, const Tagger& tagger);

struct TemplateOptions {
    bool no_context_reg = false;
    bool no_subject_token = false;
    bool no_attribute_token = false;
};

// Template strings. Placeholders are bound in reading order: the subject
// token first (when present), then the attribute tokens.
std::string placeholders(std::size_t count);
std::string image_template_text(std::size_t r, const TemplateOptions& opts = {});
std::string standardized_caption_text(const CaptionSplit& split);
std::string subject_template_text(const CaptionSplit& split, const TemplateOptions& opts = {});
std::string attribute_template_text(const CaptionSplit& split, std::size_t r, const TemplateOptions& opts = {});
std::string whole_template_text(const CaptionSplit& split, std::size_t r, const TemplateOptions& opts = {});
// Trims the modification and strips trailing periods; empty -> precondition error.
std::string query_template_text(std::size_t r, std::string_view modification, const TemplateOptions& opts = {});

// Tokenizes `text`; overflow of max_text_len becomes an input error naming the
// token count. Vectors are bound to the slots in order.
TokenSequence render_template(const Backbone& backbone, const std::string& text,
                              const std::vector<ag::Tensor>& vectors);

struct TemplateBundle {
    TokenSequence base;       // T_B
    TokenSequence subject;    // T_S
    TokenSequence attribute;  // T_A
    TokenSequence whole;      // T_SA
    std::string base_text, subject_text, attribute_text, whole_text;
};

// `subject` is the 1 x d_token subject token, `attributes` the r attribute
// rows.
TemplateBundle derivatives(const Backbone& backbone, const CaptionSplit& split, const ag::Tensor& subject,
                           const std::vector<ag::Tensor>& attributes, const TemplateOptions& opts = {});

struct QueryTemplate {
    std::string text;
    TokenSequence tokens;
    bool truncated = false;
    std::string warning;  // set when truncated
};

// Drops trailing modification words until the sentence fits max_text_len.
QueryTemplate query_template(const Backbone& backbone, const ag::Tensor& subject,
                             const std::vector<ag::Tensor>& attributes, std::string_view modification,
                             const TemplateOptions& opts = {});

// Slot vectors for the image/query templates under `opts`.
std::vector<ag::Tensor> template_vectors(const ag::Tensor& subject, const std::vector<ag::Tensor>& attributes,
                                         const TemplateOptions& opts);

}  // namespace fticir
