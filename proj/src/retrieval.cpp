#include "fticir/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>

#include "fticir/binio.hpp"
#include "fticir/errors.hpp"

namespace fticir {

namespace {

constexpr char kIndexMagic[4] = {'F', 'T', 'I', 'X'};

double cosine_row(const Eigen::RowVectorXd& q, double q_norm, const Eigen::RowVectorXf& row) {
    const Eigen::RowVectorXd r = row.cast<double>();
    const double rn = r.norm();
    if (q_norm == 0.0 || rn == 0.0) return 0.0;
    return std::clamp(q.dot(r) / (q_norm * rn), -1.0, 1.0);
}

double cosine_d(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace

std::optional<std::size_t> RetrievalIndex::find(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == id) return i;
    }
    return std::nullopt;
}

void RetrievalIndex::validate() const {
    require(!ids.empty(), ErrorKind::data, "index holds no images");
    require(static_cast<std::size_t>(embeddings.rows()) == ids.size(), ErrorKind::data,
            "index row count differs from id count");
    std::set<std::string> seen;
    for (const std::string& id : ids) {
        require(!id.empty(), ErrorKind::data, "index contains an empty id");
        require(seen.insert(id).second, ErrorKind::data, "index contains the id " + id + " twice");
    }
}

std::vector<std::uint8_t> RetrievalIndex::serialize() const {
    validate();
    binio::Writer w;
    w.put_bytes(kIndexMagic, 4);
    w.put<std::uint32_t>(kIndexVersion);
    w.put<std::uint64_t>(ids.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(embeddings.cols()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(backbone.size()));
    w.put<std::int64_t>(created_at);
    w.put_bytes(backbone.data(), backbone.size());
    for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
        for (Eigen::Index c = 0; c < embeddings.cols(); ++c) w.put<float>(embeddings(r, c));
    }
    for (const std::string& id : ids) w.put_string(id);
    return std::move(w.bytes());
}

RetrievalIndex RetrievalIndex::deserialize(std::span<const std::uint8_t> bytes, const std::string& source) {
    binio::Reader r(bytes, source);
    const std::uint8_t* magic = r.take(4);
    require(std::equal(kIndexMagic, kIndexMagic + 4, magic), ErrorKind::parse, source + ": not an index file");
    const auto version = r.get<std::uint32_t>();
    require(version == kIndexVersion, ErrorKind::parse, source + ": unsupported index version " + std::to_string(version));
    const auto n = r.get<std::uint64_t>();
    const auto d = r.get<std::uint32_t>();
    const auto name_len = r.get<std::uint32_t>();
    RetrievalIndex idx;
    idx.created_at = r.get<std::int64_t>();
    const std::uint8_t* name = r.take(name_len);
    idx.backbone.assign(reinterpret_cast<const char*>(name), name_len);
    require(d >= 1 && n >= 1 && n * d * sizeof(float) <= r.remaining(), ErrorKind::parse,
            source + ": header declares " + std::to_string(n) + " x " + std::to_string(d) + " but the file is shorter");
    idx.embeddings.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < idx.embeddings.rows(); ++i) {
        for (Eigen::Index c = 0; c < idx.embeddings.cols(); ++c) idx.embeddings(i, c) = r.get<float>();
    }
    idx.ids.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) idx.ids.push_back(r.get_string());
    require(r.remaining() == 0, ErrorKind::parse, source + ": trailing bytes after the id table");
    idx.validate();
    return idx;
}

void RetrievalIndex::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    return deserialize(bytes, path.string());
}

RetrievalIndex build_index(const Backbone& backbone, const std::vector<ImageFile>& images, std::int64_t created_at,
                           std::ostream* warnings) {
    std::vector<std::string> ids;
    std::vector<Eigen::RowVectorXd> rows;
    for (const ImageFile& f : images) {
        try {
            rows.push_back(backbone.encode_image(load_image(f.path)).global);
            ids.push_back(f.id);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::input && e.kind() != ErrorKind::io) throw;
            if (warnings) *warnings << "warning\tskipping " << f.path.string() << ": " << e.what() << '\n';
        }
    }
    require(!ids.empty(), ErrorKind::data, "no readable image to index");
    RetrievalIndex idx;
    idx.ids = std::move(ids);
    idx.backbone = backbone.config().name;
    idx.created_at = created_at;
    idx.embeddings.resize(static_cast<Eigen::Index>(rows.size()), backbone.config().d_embed);
    for (std::size_t i = 0; i < rows.size(); ++i) idx.embeddings.row(static_cast<Eigen::Index>(i)) = rows[i].cast<float>();
    idx.validate();
    return idx;
}

RetrievalIndex build_index(const Backbone& backbone, const std::vector<std::string>& ids,
                           const std::vector<Image>& images, std::int64_t created_at) {
    require(ids.size() == images.size(), ErrorKind::input, "ids and images differ in length");
    require(!ids.empty(), ErrorKind::data, "no image to index");
    RetrievalIndex idx;
    idx.ids = ids;
    idx.backbone = backbone.config().name;
    idx.created_at = created_at;
    idx.embeddings.resize(static_cast<Eigen::Index>(ids.size()), backbone.config().d_embed);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        idx.embeddings.row(static_cast<Eigen::Index>(i)) = backbone.encode_image(images[i]).global.cast<float>();
    }
    idx.validate();
    return idx;
}

std::vector<SearchHit> rank_index(const RetrievalIndex& index, const Eigen::RowVectorXd& query, std::size_t top_k,
                                  const std::string* exclude_id) {
    require(top_k >= 1, ErrorKind::input, "top_k must be >= 1");
    require(query.size() == index.embeddings.cols(), ErrorKind::shape,
            "query width " + std::to_string(query.size()) + " != index width " + std::to_string(index.embeddings.cols()));
    const double qn = query.norm();
    std::vector<SearchHit> hits;
    hits.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (exclude_id != nullptr && index.ids[i] == *exclude_id) continue;
        hits.push_back({index.ids[i], cosine_row(query, qn, index.embeddings.row(static_cast<Eigen::Index>(i)))});
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (hits.size() > top_k) hits.resize(top_k);
    return hits;
}

Retriever::Retriever(const Backbone& backbone, const Model& model, const RetrievalIndex& index,
                     std::optional<std::filesystem::path> image_dir)
    : backbone_(backbone), model_(model), index_(index) {
    model_.check_backbone(backbone_);
    require(index_.embeddings.cols() == backbone_.config().d_embed, ErrorKind::config,
            "index width does not match the backbone embedding width");
    if (image_dir) {
        for (ImageFile& f : list_image_files(*image_dir)) files_.emplace(f.id, std::move(f.path));
    }
}

std::optional<std::filesystem::path> Retriever::image_path(const std::string& id) const {
    auto it = files_.find(id);
    if (it == files_.end()) return std::nullopt;
    return it->second;
}

ImageFeatures Retriever::reference_features(const std::string& id) const {
    {
        std::lock_guard lock(cache_mutex_);
        if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    }
    const std::optional<std::filesystem::path> path = image_path(id);
    if (!path) fail(ErrorKind::input, "unknown reference id " + id);
    ImageFeatures feats = backbone_.encode_image(load_image(*path));
    std::lock_guard lock(cache_mutex_);
    cache_.emplace(id, feats);
    return feats;
}

SearchResult Retriever::search(const ComposedQuery& query) const {
    require(query.top_k >= 1, ErrorKind::input, "top_k must be >= 1");
    ImageFeatures feats;
    if (query.reference_image) {
        feats = backbone_.encode_image(*query.reference_image);
    } else {
        require(!query.reference_id.empty(), ErrorKind::input, "query needs a reference id or an image");
        feats = reference_features(query.reference_id);
    }
    const Model::Query q = model_.compose(backbone_, feats, query.modification);
    SearchResult out;
    const std::string* exclude = query.exclude_reference && !query.reference_image ? &query.reference_id : nullptr;
    out.hits = rank_index(index_, q.embedding, query.top_k, exclude);
    out.query_text = q.text;
    out.truncated = q.truncated;
    out.warning = q.warning;
    out.r = q.r;
    return out;
}

DescriptionCorpus DescriptionCorpus::from_phrases(const Backbone& backbone, std::vector<std::string> subjects,
                                                  std::vector<std::string> attributes) {
    DescriptionCorpus c;
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    std::sort(attributes.begin(), attributes.end());
    attributes.erase(std::unique(attributes.begin(), attributes.end()), attributes.end());
    attributes.erase(std::remove(attributes.begin(), attributes.end(), std::string()), attributes.end());
    require(!subjects.empty() && !attributes.empty(), ErrorKind::data,
            "description corpus needs at least one subject and one attribute phrase");
    c.subjects = std::move(subjects);
    c.attributes = std::move(attributes);
    const int d = backbone.config().d_embed;
    c.subject_embeddings.resize(static_cast<Eigen::Index>(c.subjects.size()), d);
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
        c.subject_embeddings.row(static_cast<Eigen::Index>(i)) =
            backbone.encode_text_value(render_template(backbone, "a photo of " + c.subjects[i] + ".", {}));
    }
    c.attribute_embeddings.resize(static_cast<Eigen::Index>(c.attributes.size()), d);
    for (std::size_t i = 0; i < c.attributes.size(); ++i) {
        c.attribute_embeddings.row(static_cast<Eigen::Index>(i)) =
            backbone.encode_text_value(render_template(backbone, "a photo with " + c.attributes[i] + ".", {}));
    }
    return c;
}

DescriptionCorpus DescriptionCorpus::build(const Backbone& backbone, const std::vector<std::string>& captions,
                                           const Tagger& tagger) {
    std::vector<std::string> subjects;
    std::vector<std::string> attributes;
    for (const std::string& caption : captions) {
        const CaptionSplit s = split_caption(caption, tagger);
        subjects.push_back(s.subj);
        attributes.push_back(s.attr);
    }
    return from_phrases(backbone, std::move(subjects), std::move(attributes));
}

std::vector<Description> rank_phrases(const std::vector<std::string>& phrases, const Eigen::MatrixXd& embeddings,
                                      const Eigen::RowVectorXd& query, std::size_t top) {
    require(!phrases.empty(), ErrorKind::data, "description corpus is empty");
    std::vector<Description> out;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        out.push_back({phrases[i], cosine_d(query, embeddings.row(static_cast<Eigen::Index>(i)))});
    }
    std::sort(out.begin(), out.end(), [](const Description& a, const Description& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.text < b.text;
    });
    if (out.size() > top) out.resize(top);
    return out;
}

DescribeResult describe(const Backbone& backbone, const Model& model, const ImageFeatures& features,
                        const DescriptionCorpus& corpus, std::size_t top) {
    require(top >= 1, ErrorKind::input, "describe needs top >= 1");
    ag::NoGradGuard guard;
    const PseudoTokens pt = model.invert(features);
    DescribeResult out;
    out.subject_sentence = "a photo of " + std::string(kPlaceholder) + ".";
    out.attribute_sentence = "a photo with " + placeholders(pt.r()) + ".";
    const Eigen::RowVectorXd s = backbone.encode_text_value(render_template(backbone, out.subject_sentence, {pt.subject}));
    const Eigen::RowVectorXd a =
        backbone.encode_text_value(render_template(backbone, out.attribute_sentence, pt.attribute_rows()));
    out.subjects = rank_phrases(corpus.subjects, corpus.subject_embeddings, s, top);
    out.attributes = rank_phrases(corpus.attributes, corpus.attribute_embeddings, a, top);
    return out;
}

}  // namespace fticir
