#pragma once

// Candidate index, composed-query search and pseudo-to-real description
// retrieval.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fticir/backbone.hpp"
#include "fticir/image.hpp"
#include "fticir/model.hpp"

namespace fticir {

inline constexpr std::uint32_t kIndexVersion = 1;

// On disk (little-endian): "FTIX", u32 version, u64 N, u32 d_embed,
// u32 name_len, i64 created_at, name bytes, N x d_embed f32 row-major, then
// N ids as u32 length + UTF-8 bytes.
struct RetrievalIndex {
    std::vector<std::string> ids;
    Eigen::MatrixXf embeddings;  // N x d_embed
    std::string backbone;
    std::int64_t created_at = 0;

    std::size_t size() const { return ids.size(); }
    std::optional<std::size_t> find(const std::string& id) const;

    std::vector<std::uint8_t> serialize() const;
    static RetrievalIndex deserialize(std::span<const std::uint8_t> bytes, const std::string& source = "<bytes>");
    void save(const std::filesystem::path& path) const;  // temp file + rename
    static RetrievalIndex load(const std::filesystem::path& path);

    void validate() const;
};

// Global image features, one row per readable image. Unreadable images are
// skipped with a warning line; no readable image is a data error.
RetrievalIndex build_index(const Backbone& backbone, const std::vector<ImageFile>& images, std::int64_t created_at,
                           std::ostream* warnings = nullptr);
RetrievalIndex build_index(const Backbone& backbone, const std::vector<std::string>& ids,
                           const std::vector<Image>& images, std::int64_t created_at);

struct SearchHit {
    std::string id;
    double score = 0.0;
};

// Cosine against every row, descending, ties by ascending id, clamped to N.
std::vector<SearchHit> rank_index(const RetrievalIndex& index, const Eigen::RowVectorXd& query, std::size_t top_k,
                                  const std::string* exclude_id = nullptr);

struct ComposedQuery {
    std::string reference_id;          // used when `reference_image` is empty
    std::optional<Image> reference_image;
    std::string modification;
    std::size_t top_k = 20;
    bool exclude_reference = false;    // drop the reference id from the ranking
};

struct SearchResult {
    std::vector<SearchHit> hits;
    std::string query_text;
    bool truncated = false;
    std::string warning;
    std::size_t r = 0;
};

// Read-only after construction; search() may be called from several threads.
class Retriever {
public:
    // `image_dir` resolves reference ids to files (id = file stem).
    Retriever(const Backbone& backbone, const Model& model, const RetrievalIndex& index,
              std::optional<std::filesystem::path> image_dir);

    SearchResult search(const ComposedQuery& query) const;
    ImageFeatures reference_features(const std::string& id) const;
    std::optional<std::filesystem::path> image_path(const std::string& id) const;

    const RetrievalIndex& index() const { return index_; }
    const Model& model() const { return model_; }
    const Backbone& backbone() const { return backbone_; }

private:
    const Backbone& backbone_;
    const Model& model_;
    const RetrievalIndex& index_;
    std::map<std::string, std::filesystem::path> files_;
    mutable std::mutex cache_mutex_;
    mutable std::map<std::string, ImageFeatures> cache_;
};

struct Description {
    std::string text;
    double score = 0.0;
};

// Distinct subject and attribute phrases with their text embeddings
// ("a photo of {subj}." and "a photo with {attr}.").
struct DescriptionCorpus {
    std::vector<std::string> subjects;
    std::vector<std::string> attributes;
    Eigen::MatrixXd subject_embeddings;
    Eigen::MatrixXd attribute_embeddings;

    static DescriptionCorpus build(const Backbone& backbone, const std::vector<std::string>& captions,
                                   const Tagger& tagger);
    static DescriptionCorpus from_phrases(const Backbone& backbone, std::vector<std::string> subjects,
                                          std::vector<std::string> attributes);
};

struct DescribeResult {
    std::vector<Description> subjects;
    std::vector<Description> attributes;
    std::string subject_sentence;
    std::string attribute_sentence;
};

// Ranks subject phrases against "a photo of S*." and attribute phrases
// against "a photo with A_1* ... A_r*.".
DescribeResult describe(const Backbone& backbone, const Model& model, const ImageFeatures& features,
                        const DescriptionCorpus& corpus, std::size_t top = 4);

// Descending score, ties by ascending text; shared with describe().
std::vector<Description> rank_phrases(const std::vector<std::string>& phrases, const Eigen::MatrixXd& embeddings,
                                      const Eigen::RowVectorXd& query, std::size_t top);

}  // namespace fticir
