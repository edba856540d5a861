#include "fticir/textgen.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <utility>

#include "fticir/errors.hpp"

namespace fticir {

namespace {

struct LexiconGroup {
    PosTag tag;
    std::initializer_list<const char*> words;
};

const LexiconGroup kLexicon[] = {
    {PosTag::det,
     {"a", "an", "the", "this", "that", "these", "those", "some", "many", "its", "their", "his", "her", "my",
      "your", "our", "each", "every", "another", "other", "no", "any", "all", "both"}},
    {PosTag::num,
     {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
      "several", "single", "few", "multiple", "numerous"}},
    {PosTag::prep,
     {"of", "in", "on", "at", "to", "from", "by", "for", "into", "onto", "over", "under", "near", "next",
      "behind", "between", "through", "around", "across", "along", "above", "below", "beside", "inside",
      "outside", "against", "with", "without", "up", "down", "off", "out", "like", "during", "upon", "beneath",
      "toward", "towards", "than", "as"}},
    {PosTag::conj, {"and", "or", "but", "while", "yet", "so", "nor"}},
    {PosTag::pron,
     {"it", "he", "she", "they", "them", "him", "we", "you", "i", "who", "which", "there", "what", "someone",
      "something"}},
    {PosTag::adv,
     {"very", "too", "only", "also", "just", "together", "not", "still", "here", "away", "almost", "really",
      "instead", "more", "less", "most", "least", "much"}},
    {PosTag::verb,
     {"is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "does", "do", "did", "can",
      "shows", "show", "make", "made", "change", "replace", "remove", "add", "sits", "stands", "lies", "holds",
      "wears", "looks", "eats", "rides", "flies", "runs", "walks", "plays", "sit", "stand", "lie", "hold",
      "wear", "look", "eat", "ride", "fly", "run", "walk", "play", "lay", "sat", "stood", "held", "worn",
      "parked", "covered", "filled", "placed", "arranged", "stacked", "scattered", "grouped"}},
    {PosTag::adj,
     {"red", "green", "blue", "yellow", "orange", "purple", "pink", "black", "white", "gray", "grey", "brown",
      "cyan", "magenta", "teal", "beige", "gold", "golden", "silver", "dark", "light", "bright", "pale",
      "colorful", "colourful", "striped", "dotted", "plain", "patterned", "floral", "checkered", "shiny",
      "big", "small", "large", "tiny", "huge", "little", "long", "short", "tall", "wide", "narrow", "round",
      "old", "young", "new", "empty", "full", "open", "closed", "wooden", "metal", "sleeveless", "fitted",
      "loose", "tight", "cute", "pretty", "beautiful", "clean", "dirty", "wet", "dry", "hot", "cold", "fresh",
      "same", "different", "left", "right", "busy", "sunny", "cloudy", "snowy", "grassy", "sandy", "rocky",
      "casual", "formal", "elegant", "modern", "vintage", "brighter", "darker", "longer", "shorter", "larger",
      "smaller"}},
    // Nouns that the suffix rules would misread.
    {PosTag::noun,
     {"building", "ceiling", "clothing", "painting", "ring", "rings", "king", "thing", "things", "string",
      "evening", "morning", "wedding", "bed", "beds", "shed", "sled", "pudding",
      "swing", "wing", "wings", "spring", "bedding", "sibling", "offspring", "earring", "earrings", "family",
      "butterfly", "lily", "belly", "jelly", "rally", "alley", "valley", "trolley", "bully", "puppy",
      "square", "squares", "circle", "circles", "triangle", "triangles", "star", "stars", "cross", "crosses",
      "diamond", "diamonds", "stripe", "stripes", "dot", "dots", "bar", "bars", "shape", "shapes",
      "background", "front", "top", "bottom", "side", "middle", "center", "corner", "edge", "frame", "canvas",
      "shirt", "dress", "pants", "jeans", "jacket", "coat", "skirt", "tee", "t-shirt", "hat", "shoes", "sleeve",
      "sleeves", "collar", "neck", "neckline", "print", "logo", "lace", "pair", "group", "couple", "bunch",
      "lot", "man", "woman", "men", "women", "dog", "dogs", "cat", "cats", "door", "photo", "picture", "image"}},
};

std::string strip_edges(std::string_view word) {
    std::size_t b = 0;
    std::size_t e = word.size();
    auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) && c != '-' && c != '\''; };
    while (b < e && punct(word[b])) ++b;
    while (e > b && punct(word[e - 1])) --e;
    return std::string(word.substr(b, e - b));
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += words[i];
    }
    return out;
}

// Trim, drop trailing periods and whitespace.
std::string clean_tail(std::string_view text) {
    std::size_t b = 0;
    std::size_t e = text.size();
    while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && (text[e - 1] == '.' || std::isspace(static_cast<unsigned char>(text[e - 1])))) --e;
    return std::string(text.substr(b, e - b));
}

}  // namespace

std::string_view to_string(PosTag tag) {
    switch (tag) {
        case PosTag::noun: return "NOUN";
        case PosTag::verb: return "VERB";
        case PosTag::adj: return "ADJ";
        case PosTag::adv: return "ADV";
        case PosTag::det: return "DET";
        case PosTag::num: return "NUM";
        case PosTag::prep: return "ADP";
        case PosTag::pron: return "PRON";
        case PosTag::conj: return "CONJ";
        case PosTag::punct: return "PUNCT";
        case PosTag::other: return "X";
    }
    return "X";
}

PosTag parse_pos_tag(std::string_view name) {
    std::string upper;
    for (char c : name) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper == "NOUN" || upper == "PROPN" || upper == "NN" || upper == "NNS" || upper == "NNP") return PosTag::noun;
    if (upper == "VERB" || upper == "AUX" || upper.rfind("VB", 0) == 0) return PosTag::verb;
    if (upper == "ADJ" || upper.rfind("JJ", 0) == 0) return PosTag::adj;
    if (upper == "ADV" || upper.rfind("RB", 0) == 0) return PosTag::adv;
    if (upper == "DET" || upper == "DT") return PosTag::det;
    if (upper == "NUM" || upper == "CD") return PosTag::num;
    if (upper == "ADP" || upper == "IN") return PosTag::prep;
    if (upper == "PRON" || upper.rfind("PRP", 0) == 0) return PosTag::pron;
    if (upper == "CONJ" || upper == "CCONJ" || upper == "SCONJ" || upper == "CC") return PosTag::conj;
    if (upper == "PUNCT") return PosTag::punct;
    if (upper == "X" || upper == "SYM" || upper == "PART" || upper == "INTJ") return PosTag::other;
    fail(ErrorKind::parse, "unknown part-of-speech tag " + std::string(name));
}

LexiconTagger::LexiconTagger() {
    for (const LexiconGroup& group : kLexicon) {
        for (const char* w : group.words) lexicon_[w] = group.tag;
    }
}

PosTag LexiconTagger::tag_word(std::string_view raw) const {
    const std::string word = strip_edges(raw);
    if (word.empty()) return PosTag::punct;
    if (auto it = lexicon_.find(word); it != lexicon_.end()) return it->second;
    if (std::isdigit(static_cast<unsigned char>(word[0]))) return PosTag::num;
    if (ends_with(word, "ing") || ends_with(word, "ed")) return PosTag::verb;
    if (ends_with(word, "ly")) return PosTag::adv;
    return PosTag::noun;
}

std::vector<PosTag> LexiconTagger::tag(const std::vector<std::string>& words) const {
    std::vector<PosTag> tags;
    tags.reserve(words.size());
    for (const std::string& w : words) tags.push_back(tag_word(w));
    return tags;
}

ExternalTagger::ExternalTagger(Fn fn) : fn_(std::move(fn)) {
    require(static_cast<bool>(fn_), ErrorKind::config, "external tagger needs a callable");
}

ExternalTagger ExternalTagger::from_table(std::map<std::string, PosTag> table, std::shared_ptr<const Tagger> fallback) {
    if (!fallback) fallback = std::make_shared<LexiconTagger>();
    auto shared = std::make_shared<const std::map<std::string, PosTag>>(std::move(table));
    return ExternalTagger([shared, fallback](const std::vector<std::string>& words) {
        std::vector<PosTag> tags = fallback->tag(words);
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (auto it = shared->find(strip_edges(words[i])); it != shared->end()) tags[i] = it->second;
        }
        return tags;
    });
}

ExternalTagger ExternalTagger::load_table(const std::filesystem::path& path, std::shared_ptr<const Tagger> fallback) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open tagger table " + path.string());
    std::map<std::string, PosTag> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": expected word<TAB>TAG");
        }
        std::string word = line.substr(0, tab);
        for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        table[word] = parse_pos_tag(line.substr(tab + 1));
    }
    return from_table(std::move(table), std::move(fallback));
}

std::vector<PosTag> ExternalTagger::tag(const std::vector<std::string>& words) const {
    std::vector<PosTag> tags = fn_(words);
    require(tags.size() == words.size(), ErrorKind::data, "external tagger returned a tag count that differs from the word count");
    return tags;
}

std::string normalize_caption(std::string_view caption) {
    std::string lower(caption);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const std::vector<std::string> words = split_words(clean_tail(lower));
    return join(words, 0, words.size());
}

CaptionSplit split_caption(std::string_view caption, const Tagger& tagger) {
    CaptionSplit out;
    out.full = normalize_caption(caption);
    require(!out.full.empty(), ErrorKind::precondition, "cannot split an empty caption");
    const std::vector<std::string> words = split_words(out.full);
    const std::vector<PosTag> tags = tagger.tag(words);
    require(tags.size() == words.size(), ErrorKind::data, "tagger returned a tag count that differs from the word count");

    std::size_t first = words.size();
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (tags[i] == PosTag::noun) {
            first = i;
            break;
        }
    }
    if (first == words.size()) {
        out.subj = out.full;
        return out;
    }
    std::size_t end = first + 1;
    while (end < words.size() && tags[end] == PosTag::noun) ++end;
    out.subj = join(words, 0, end);
    out.attr = join(words, end, words.size());
    return out;
}

std::string placeholders(std::size_t count) {
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i > 0) out += ' ';
        out += kPlaceholder;
    }
    return out;
}

namespace {

std::string pseudo_sentence(std::size_t r, const TemplateOptions& opts) {
    const std::string p(kPlaceholder);
    if (opts.no_subject_token) return "a photo with " + placeholders(r);
    if (opts.no_attribute_token) return "a photo of " + p;
    return "a photo of " + p + " with " + placeholders(r);
}

}  // namespace

std::string image_template_text(std::size_t r, const TemplateOptions& opts) {
    require(r >= 1, ErrorKind::precondition, "image template needs at least one attribute token");
    return pseudo_sentence(r, opts) + ".";
}

std::string standardized_caption_text(const CaptionSplit& split) {
    require(!split.subj.empty(), ErrorKind::precondition, "caption split has an empty subject");
    if (split.attr.empty()) return "a photo of " + split.subj + ".";
    return "a photo of " + split.subj + " with " + split.attr + ".";
}

std::string subject_template_text(const CaptionSplit& split, const TemplateOptions& opts) {
    const std::string p(kPlaceholder);
    if (opts.no_context_reg || split.attr.empty()) return "a photo of " + p + ".";
    return "a photo of " + p + " with " + split.attr + ".";
}

std::string attribute_template_text(const CaptionSplit& split, std::size_t r, const TemplateOptions& opts) {
    require(r >= 1, ErrorKind::precondition, "attribute template needs at least one attribute token");
    if (opts.no_context_reg) return "a photo with " + placeholders(r) + ".";
    return "a photo of " + split.subj + " with " + placeholders(r) + ".";
}

std::string whole_template_text(const CaptionSplit& split, std::size_t r, const TemplateOptions& opts) {
    if (opts.no_subject_token) return attribute_template_text(split, r, opts);
    if (opts.no_attribute_token) return subject_template_text(split, opts);
    return image_template_text(r);
}

std::string query_template_text(std::size_t r, std::string_view modification, const TemplateOptions& opts) {
    require(r >= 1, ErrorKind::precondition, "query template needs at least one attribute token");
    const std::string mod = clean_tail(modification);
    require(!mod.empty(), ErrorKind::precondition, "modification text must be non-empty");
    return pseudo_sentence(r, opts) + " but " + mod + ".";
}

TokenSequence render_template(const Backbone& backbone, const std::string& text,
                              const std::vector<ag::Tensor>& vectors) {
    TokenSequence tokens;
    try {
        tokens = backbone.tokenize(text);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::input) throw;
        fail(ErrorKind::input, "template overflow: \"" + text + "\": " + e.what());
    }
    return bind_pseudo(std::move(tokens), vectors);
}

std::vector<ag::Tensor> template_vectors(const ag::Tensor& subject, const std::vector<ag::Tensor>& attributes,
                                         const TemplateOptions& opts) {
    std::vector<ag::Tensor> out;
    if (!opts.no_subject_token) out.push_back(subject);
    if (opts.no_subject_token || !opts.no_attribute_token) {
        out.insert(out.end(), attributes.begin(), attributes.end());
    }
    return out;
}

TemplateBundle derivatives(const Backbone& backbone, const CaptionSplit& split, const ag::Tensor& subject,
                           const std::vector<ag::Tensor>& attributes, const TemplateOptions& opts) {
    const std::size_t r = attributes.size();
    TemplateBundle b;
    b.base_text = standardized_caption_text(split);
    b.subject_text = subject_template_text(split, opts);
    b.attribute_text = attribute_template_text(split, r, opts);
    b.whole_text = whole_template_text(split, r, opts);
    b.base = render_template(backbone, b.base_text, {});
    b.subject = render_template(backbone, b.subject_text, {subject});
    b.attribute = render_template(backbone, b.attribute_text, attributes);
    std::vector<ag::Tensor> whole;
    if (opts.no_subject_token) {
        whole = attributes;
    } else if (opts.no_attribute_token) {
        whole = {subject};
    } else {
        whole.push_back(subject);
        whole.insert(whole.end(), attributes.begin(), attributes.end());
    }
    b.whole = render_template(backbone, b.whole_text, whole);
    return b;
}

QueryTemplate query_template(const Backbone& backbone, const ag::Tensor& subject,
                             const std::vector<ag::Tensor>& attributes, std::string_view modification,
                             const TemplateOptions& opts) {
    const std::vector<ag::Tensor> vectors = template_vectors(subject, attributes, opts);
    std::vector<std::string> words = split_words(clean_tail(modification));
    require(!words.empty(), ErrorKind::precondition, "modification text must be non-empty");
    const std::size_t original = words.size();
    const std::size_t limit = static_cast<std::size_t>(backbone.config().max_text_len);
    QueryTemplate q;
    while (!words.empty()) {
        q.text = query_template_text(attributes.size(), join(words, 0, words.size()), opts);
        try {
            TokenSequence tokens = backbone.tokenize(q.text);
            if (tokens.size() <= limit) {
                q.tokens = bind_pseudo(std::move(tokens), vectors);
                break;
            }
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::input) throw;
        }
        words.pop_back();
    }
    if (words.empty()) {
        fail(ErrorKind::input, "template overflow: even a one-word modification exceeds max_text_len " +
                                   std::to_string(limit));
    }
    if (words.size() < original) {
        q.truncated = true;
        q.warning = "modification truncated from " + std::to_string(original) + " to " + std::to_string(words.size()) +
                    " words to fit max_text_len " + std::to_string(limit);
    }
    return q;
}

}  // namespace fticir
