#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <set>

#include "fticir/backbone.hpp"
#include "fticir/errors.hpp"
#include "fticir/nn.hpp"
#include "fticir/rng.hpp"

namespace fticir {

namespace {

constexpr int kCellsPerPatchSide = 4;
constexpr int kGlobalHidden = 64;

// Closed vocabulary of the toy tokenizer. Words outside it hash into
// ToyTokenizer::kOovBuckets shared ids.
constexpr const char* kToyWords[] = {
    // function words
    "a", "an", "the", "of", "with", "but", "and", "or", "in", "on", "at", "to", "from", "by", "for", "into",
    "onto", "over", "under", "near", "next", "behind", "front", "between", "through", "around", "across",
    "along", "above", "below", "beside", "inside", "outside", "against", "up", "down", "out", "off", "is",
    "are", "be", "has", "have", "it", "its", "this", "that", "these", "those", "some", "many", "more", "less",
    "no", "not", "very", "too", "as", "than", "instead", "only", "same", "other", "another", "while", "who",
    "which", "there", "their", "his", "her", "them", "they", "make", "made", "change", "replace", "remove",
    "add", "show", "shows", "showing", "photo", "picture", "image", "view",
    // numerals
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "several", "single",
    "pair", "group", "couple", "few", "lot", "bunch",
    // colours and appearance
    "red", "green", "blue", "yellow", "orange", "purple", "pink", "black", "white", "gray", "grey", "brown",
    "cyan", "magenta", "teal", "beige", "gold", "silver", "dark", "light", "bright", "pale", "colorful",
    "striped", "dotted", "plain", "patterned", "floral", "checkered", "shiny",
    // sizes and shapes
    "big", "small", "large", "tiny", "huge", "little", "long", "short", "tall", "wide", "narrow", "round",
    "square", "squares", "circle", "circles", "triangle", "triangles", "star", "stars", "ring", "rings",
    "cross", "crosses", "diamond", "diamonds", "stripe", "stripes", "dot", "dots", "bar", "bars", "shape",
    "shapes", "row", "column", "corner", "center", "middle", "left", "right", "top", "bottom", "side",
    "edge", "background", "frame", "canvas", "field", "scattered", "arranged", "stacked", "placed",
    "floating", "grouped",
    // people, animals, objects
    "man", "men", "woman", "women", "person", "people", "boy", "girl", "child", "children", "baby", "player",
    "dog", "dogs", "cat", "cats", "bird", "birds", "horse", "horses", "cow", "cows", "sheep", "bear", "bears",
    "elephant", "elephants", "giraffe", "zebra", "duck", "ducks", "fish", "monkey", "animal", "animals",
    "car", "cars", "bus", "truck", "train", "boat", "plane", "bike", "bicycle", "motorcycle", "street",
    "road", "city", "building", "house", "room", "kitchen", "table", "chair", "bed", "couch", "door",
    "window", "wall", "floor", "grass", "tree", "trees", "water", "beach", "sky", "snow", "field", "park",
    "mountain", "river", "lake", "sand", "food", "plate", "pizza", "cake", "sandwich", "cup", "bowl",
    "bottle", "phone", "laptop", "computer", "book", "clock", "umbrella", "bag", "ball", "kite",
    // fashion
    "shirt", "shirts", "dress", "dresses", "top", "tops", "tee", "tees", "t-shirt", "jacket", "coat", "skirt",
    "pants", "jeans", "shoes", "hat", "sleeve", "sleeves", "sleeveless", "collar", "neck", "neckline",
    "waist", "logo", "print", "lace", "cotton", "denim", "leather", "fitted", "loose", "tight",
    // verbs
    "sitting", "standing", "walking", "running", "lying", "laying", "holding", "wearing", "playing",
    "eating", "riding", "flying", "swimming", "looking", "waiting", "parked", "covered", "filled",
    "hanging", "grazing", "sleeping", "jumping", "carrying", "reading", "watching", "posing", "smiling",
};

constexpr const char* kPunctuation = ".,!?;:()\"";

bool is_punct(char c) { return c != '\0' && std::strchr(kPunctuation, c) != nullptr; }

Eigen::MatrixXd seeded_normal(Rng& rng, int rows, int cols, double stddev) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal() * stddev;
    }
    return m;
}

void fingerprint_matrix(std::uint64_t& h, const Eigen::MatrixXd& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
}

int grid_side(int m_patches) {
    int g = 1;
    while (g * g < m_patches) ++g;
    return g;
}

}  // namespace

BackboneConfig BackboneConfig::from_config(const Config& cfg) {
    BackboneConfig c;
    c.name = cfg.get_string("backbone.name", c.name);
    c.d_embed = static_cast<int>(cfg.get_int("backbone.d_embed", c.d_embed));
    c.d_patch = static_cast<int>(cfg.get_int("backbone.d_patch", c.d_patch));
    c.m_patches = static_cast<int>(cfg.get_int("backbone.m_patches", c.m_patches));
    c.d_token = static_cast<int>(cfg.get_int("backbone.d_token", c.d_token));
    c.max_text_len = static_cast<int>(cfg.get_int("backbone.max_text_len", c.max_text_len));
    c.seed = static_cast<std::uint64_t>(cfg.get_int("backbone.seed", static_cast<long long>(c.seed)));
    c.text_layers = static_cast<int>(cfg.get_int("backbone.text_layers", c.text_layers));
    c.text_heads = static_cast<int>(cfg.get_int("backbone.text_heads", c.text_heads));
    c.validate();
    return c;
}

void BackboneConfig::to_config(Config& cfg) const {
    cfg.set("backbone.name", name);
    cfg.set("backbone.d_embed", std::to_string(d_embed));
    cfg.set("backbone.d_patch", std::to_string(d_patch));
    cfg.set("backbone.m_patches", std::to_string(m_patches));
    cfg.set("backbone.d_token", std::to_string(d_token));
    cfg.set("backbone.max_text_len", std::to_string(max_text_len));
    cfg.set("backbone.seed", std::to_string(seed));
    cfg.set("backbone.text_layers", std::to_string(text_layers));
    cfg.set("backbone.text_heads", std::to_string(text_heads));
}

void BackboneConfig::validate() const {
    require(d_embed >= 1 && d_patch >= 1 && m_patches >= 1 && d_token >= 1 && max_text_len >= 3, ErrorKind::config,
            "backbone dims must be >= 1 (max_text_len >= 3)");
    require(text_layers >= 0, ErrorKind::config, "backbone.text_layers must be >= 0");
    require(text_heads >= 1 && d_token % text_heads == 0, ErrorKind::config,
            "backbone.text_heads must divide backbone.d_token");
}

TokenSequence bind_pseudo(TokenSequence tokens, const std::vector<ag::Tensor>& vectors) {
    require(tokens.slots.size() == vectors.size(), ErrorKind::input,
            "template has " + std::to_string(tokens.slots.size()) + " pseudo slots but " +
                std::to_string(vectors.size()) + " vectors were supplied");
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        tokens.slots[i].vector = vectors[i];
    }
    return tokens;
}

Eigen::RowVectorXd Backbone::encode_text_value(const TokenSequence& tokens) const {
    ag::NoGradGuard guard;
    return encode_text(tokens).value().row(0);
}

Eigen::RowVectorXd Backbone::encode_text_value(std::string_view text) const {
    return encode_text_value(tokenize(text));
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config) {
    config.validate();
    if (config.name == "toy") {
        return std::make_unique<ToyBackbone>(config);
    }
    constexpr std::string_view kPluginPrefix = "plugin:";
    if (config.name.rfind(kPluginPrefix, 0) == 0) {
        return load_plugin_backbone(config.name.substr(kPluginPrefix.size()), config);
    }
    fail(ErrorKind::config, "unknown backbone.name '" + config.name + "' (expected toy or plugin:<path>)");
}

ToyTokenizer::ToyTokenizer() {
    pieces_ = {"<pad>", "<bos>", "<eos>", std::string(kPlaceholder)};
    for (const char* p = kPunctuation; *p; ++p) {
        pieces_.emplace_back(1, *p);
    }
    for (const char* w : kToyWords) {
        if (std::find(pieces_.begin(), pieces_.end(), w) == pieces_.end()) {
            pieces_.emplace_back(w);
        }
    }
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        index_.emplace(pieces_[i], static_cast<int>(i));
    }
}

std::vector<int> ToyTokenizer::encode_words(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    auto emit = [&](const std::string& word) {
        auto it = index_.find(word);
        if (it != index_.end()) {
            ids.push_back(it->second);
        } else {
            ids.push_back(static_cast<int>(pieces_.size() + fnv1a64(word) % kOovBuckets));
        }
    };
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (text.substr(i, kPlaceholder.size()) == kPlaceholder) {
            ids.push_back(kPlaceholderId);
            i += kPlaceholder.size();
        } else if (is_punct(c)) {
            emit(std::string(1, c));
            ++i;
        } else {
            std::string word;
            while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i])) && !is_punct(text[i]) &&
                   text.substr(i, kPlaceholder.size()) != kPlaceholder) {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
                ++i;
            }
            emit(word);
        }
    }
    return ids;
}

std::string ToyTokenizer::piece(int id) const {
    if (id >= 0 && id < static_cast<int>(pieces_.size())) {
        return pieces_[static_cast<std::size_t>(id)];
    }
    return "<unk>";
}

struct ToyBackbone::Weights {
    // image tower
    Eigen::MatrixXd patch_proj;  // raw -> d_patch
    Eigen::RowVectorXd patch_bias;
    Eigen::MatrixXd patch_pos;  // m x d_patch
    Eigen::MatrixXd global_hidden;
    Eigen::RowVectorXd global_hidden_bias;
    Eigen::MatrixXd global_proj;
    // text tower
    Eigen::MatrixXd token_embedding;     // vocab x d_token
    Eigen::MatrixXd position_embedding;  // max_len x d_token
    nn::TransformerEncoder encoder;
    nn::LayerNorm final_norm;
    nn::Linear text_proj;
    Eigen::MatrixXd mask;  // causal, max_len x max_len
};

ToyBackbone::ToyBackbone(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    const int g = grid_side(config_.m_patches);
    const int raw = kCellsPerPatchSide * kCellsPerPatchSide * 3;
    auto w = std::make_shared<Weights>();
    // Independent streams so that changing one tower's shape never reseeds
    // the other.
    Rng image_rng(config_.seed ^ 0x1111'2222'3333'4444ULL);
    w->patch_proj = seeded_normal(image_rng, raw, config_.d_patch, 2.0 / std::sqrt(static_cast<double>(raw)));
    w->patch_bias = seeded_normal(image_rng, 1, config_.d_patch, 0.1);
    w->patch_pos = seeded_normal(image_rng, config_.m_patches, config_.d_patch, 0.1);
    Rng global_rng(config_.seed ^ 0x5555'6666'7777'8888ULL);
    const int flat = g * g * raw;
    w->global_hidden = seeded_normal(global_rng, flat, kGlobalHidden, 2.0 / std::sqrt(static_cast<double>(flat)));
    w->global_hidden_bias = seeded_normal(global_rng, 1, kGlobalHidden, 0.1);
    w->global_proj = seeded_normal(global_rng, kGlobalHidden, config_.d_embed, 1.0 / std::sqrt(double(kGlobalHidden)));

    Rng text_rng(config_.seed ^ 0x9999'AAAA'BBBB'CCCCULL);
    w->token_embedding = seeded_normal(text_rng, tokenizer_.vocab_size(), config_.d_token, 1.0);
    w->position_embedding = seeded_normal(text_rng, config_.max_text_len, config_.d_token, 0.3);
    w->encoder = nn::TransformerEncoder::create(config_.d_token, config_.text_heads, config_.text_layers,
                                                4 * config_.d_token, /*pre_norm=*/true, text_rng, false);
    w->final_norm = nn::LayerNorm::create(config_.d_token, false);
    w->text_proj = nn::Linear::create(config_.d_token, config_.d_embed, text_rng, false);
    w->mask = nn::causal_mask(config_.max_text_len);
    weights_ = std::move(w);
}

ImageFeatures ToyBackbone::encode_image(const Image& image) const {
    const int g = grid_side(config_.m_patches);
    const int side = g * kCellsPerPatchSide;
    if (image.width < side || image.height < side ||
        image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        fail(ErrorKind::input, "image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                   " cannot be resized to the toy input grid " + std::to_string(side));
    }
    // Area pooling: every pixel lands in exactly one cell.
    std::vector<double> cells(static_cast<std::size_t>(side) * side * 3, 0.0);
    std::vector<int> counts(static_cast<std::size_t>(side) * side, 0);
    for (int y = 0; y < image.height; ++y) {
        const int cy = static_cast<int>(static_cast<long long>(y) * side / image.height);
        for (int x = 0; x < image.width; ++x) {
            const int cx = static_cast<int>(static_cast<long long>(x) * side / image.width);
            const std::size_t cell = static_cast<std::size_t>(cy) * side + cx;
            ++counts[cell];
            for (int ch = 0; ch < 3; ++ch) {
                cells[cell * 3 + ch] += (image.at(x, y, ch) / 255.0 - 0.5) * 2.0;
            }
        }
    }
    for (std::size_t cell = 0; cell < counts.size(); ++cell) {
        for (int ch = 0; ch < 3; ++ch) cells[cell * 3 + ch] /= counts[cell];
    }
    const int raw = kCellsPerPatchSide * kCellsPerPatchSide * 3;
    Eigen::MatrixXd raw_patches(g * g, raw);
    for (int py = 0; py < g; ++py) {
        for (int px = 0; px < g; ++px) {
            int col = 0;
            for (int sy = 0; sy < kCellsPerPatchSide; ++sy) {
                for (int sx = 0; sx < kCellsPerPatchSide; ++sx) {
                    const std::size_t cell =
                        static_cast<std::size_t>(py * kCellsPerPatchSide + sy) * side + px * kCellsPerPatchSide + sx;
                    for (int ch = 0; ch < 3; ++ch) raw_patches(py * g + px, col++) = cells[cell * 3 + ch];
                }
            }
        }
    }
    const Weights& w = *weights_;
    ImageFeatures out;
    Eigen::MatrixXd pre = raw_patches.topRows(config_.m_patches) * w.patch_proj;
    pre.rowwise() += w.patch_bias;
    out.patches = (pre + w.patch_pos).array().tanh().matrix();

    Eigen::RowVectorXd flat_rows(raw_patches.size());
    for (Eigen::Index r = 0; r < raw_patches.rows(); ++r) {
        flat_rows.segment(r * raw, raw) = raw_patches.row(r);
    }
    Eigen::RowVectorXd hidden = (flat_rows * w.global_hidden + w.global_hidden_bias).array().tanh().matrix();
    out.global = hidden * w.global_proj;
    return out;
}

TokenSequence ToyBackbone::tokenize(std::string_view text) const {
    TokenSequence seq;
    seq.ids.push_back(ToyTokenizer::kBegin);
    for (int id : tokenizer_.encode_words(text)) {
        seq.ids.push_back(id);
    }
    seq.ids.push_back(ToyTokenizer::kEnd);
    if (seq.ids.size() > static_cast<std::size_t>(config_.max_text_len)) {
        fail(ErrorKind::input, "text of " + std::to_string(seq.ids.size()) + " tokens exceeds max_text_len " +
                                   std::to_string(config_.max_text_len));
    }
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (seq.ids[i] == ToyTokenizer::kPlaceholderId) {
            seq.slots.push_back(PseudoSlot{i, {}});
        }
    }
    return seq;
}

std::string ToyBackbone::detokenize(const TokenSequence& tokens) const {
    std::string out;
    for (int id : tokens.ids) {
        if (id == ToyTokenizer::kBegin || id == ToyTokenizer::kEnd || id == ToyTokenizer::kPad) {
            continue;
        }
        std::string p = tokenizer_.piece(id);
        const bool attach = p.size() == 1 && std::strchr(".,!?;:", p[0]) != nullptr;
        if (!out.empty() && !attach) out += ' ';
        out += p;
    }
    return out;
}

ag::Tensor ToyBackbone::encode_text(const TokenSequence& tokens) const {
    const std::size_t length = tokens.ids.size();
    if (length == 0 || length > static_cast<std::size_t>(config_.max_text_len)) {
        fail(ErrorKind::input, "token sequence length " + std::to_string(length) + " outside [1, " +
                                   std::to_string(config_.max_text_len) + "]");
    }
    const Weights& w = *weights_;
    const int vocab = tokenizer_.vocab_size();
    Eigen::MatrixXd base(static_cast<Eigen::Index>(length), config_.d_token);
    std::size_t end_pos = length - 1;
    bool seen_end = false;
    std::size_t placeholders = 0;
    for (std::size_t i = 0; i < length; ++i) {
        const int id = tokens.ids[i];
        require(id >= 0 && id < vocab, ErrorKind::input, "token id " + std::to_string(id) + " out of vocabulary");
        base.row(static_cast<Eigen::Index>(i)) = w.token_embedding.row(id);
        if (id == ToyTokenizer::kEnd && !seen_end) {
            end_pos = i;
            seen_end = true;
        }
        if (id == ToyTokenizer::kPlaceholderId) ++placeholders;
    }
    std::vector<std::size_t> positions;
    std::vector<ag::Tensor> vectors;
    std::set<std::size_t> used;
    for (const PseudoSlot& slot : tokens.slots) {
        require(slot.position < length && tokens.ids[slot.position] == ToyTokenizer::kPlaceholderId,
                ErrorKind::input, "pseudo slot at " + std::to_string(slot.position) + " is not a placeholder token");
        require(used.insert(slot.position).second, ErrorKind::input, "duplicate pseudo slot position");
        require(slot.vector.defined(), ErrorKind::input, "pseudo slot has no bound vector");
        require(slot.vector.rows() == 1 && slot.vector.cols() == config_.d_token, ErrorKind::shape,
                "pseudo vector width must be d_token=" + std::to_string(config_.d_token));
        positions.push_back(slot.position);
        vectors.push_back(slot.vector);
    }
    require(placeholders == positions.size(), ErrorKind::input, "placeholder token without a bound pseudo slot");

    ag::Tensor x = positions.empty() ? ag::Tensor::constant(base) : ag::replace_rows(base, positions, vectors);
    x = ag::add_constant(x, w.position_embedding.topRows(static_cast<Eigen::Index>(length)));
    const Eigen::MatrixXd mask = w.mask.topLeftCorner(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(length));
    ag::Tensor h = w.encoder.forward(x, &mask);
    h = ag::slice_rows(h, static_cast<Eigen::Index>(end_pos), 1);
    return w.text_proj.forward(w.final_norm.forward(h));
}

std::uint64_t ToyBackbone::weights_fingerprint() const {
    const Weights& w = *weights_;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    fingerprint_matrix(h, w.patch_proj);
    fingerprint_matrix(h, w.patch_bias);
    fingerprint_matrix(h, w.patch_pos);
    fingerprint_matrix(h, w.global_hidden);
    fingerprint_matrix(h, w.global_hidden_bias);
    fingerprint_matrix(h, w.global_proj);
    fingerprint_matrix(h, w.token_embedding);
    fingerprint_matrix(h, w.position_embedding);
    nn::ParameterList text;
    w.encoder.collect(text, "encoder");
    w.final_norm.collect(text, "final_norm");
    w.text_proj.collect(text, "proj");
    for (const auto& [name, t] : text.items()) {
        fingerprint_matrix(h, t.value());
    }
    return h;
}

}  // namespace fticir
