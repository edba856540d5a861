#include <doctest.h>

#include <thread>

#include "../support.hpp"
#include "fticir/errors.hpp"
#include "fticir/retrieval.hpp"
#include "fticir/toydata.hpp"

using namespace fticir;
using namespace fticir::testing;

namespace {

struct Corpus {
    ToyCorpus corpus;
    TempDir dir{"retrieval"};
    Config config;
    std::unique_ptr<Backbone> backbone;

    explicit Corpus(int count) {
        ToyCorpusConfig tc;
        tc.count = count;
        corpus = ToyCorpus::generate(tc);
        corpus.write(dir.path());
        config.set("backbone.name", "toy");
        backbone = make_backbone(BackboneConfig::from_config(config));
    }
    std::filesystem::path images() const { return dir / "images"; }
};

std::vector<std::string> oracle_ranking(const RetrievalIndex& idx, const Eigen::RowVectorXd& q) {
    std::vector<std::pair<double, std::string>> scored;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Eigen::RowVectorXd row = idx.embeddings.row(static_cast<Eigen::Index>(i)).cast<double>();
        scored.emplace_back(oracle::cos(q, row), idx.ids[i]);
    }
    std::vector<std::string> out;
    // selection by repeated scan: highest score, then smallest id
    std::vector<bool> used(scored.size(), false);
    for (std::size_t k = 0; k < scored.size(); ++k) {
        std::size_t best = scored.size();
        for (std::size_t i = 0; i < scored.size(); ++i) {
            if (used[i]) continue;
            if (best == scored.size() || scored[i].first > scored[best].first ||
                (scored[i].first == scored[best].first && scored[i].second < scored[best].second)) {
                best = i;
            }
        }
        used[best] = true;
        out.push_back(scored[best].second);
    }
    return out;
}

}  // namespace

TEST_SUITE("retrieval") {

TEST_CASE("index holds one global feature per image and rebuilds bitwise") {
    Corpus c(200);
    const auto files = list_image_files(c.images());
    const RetrievalIndex idx = build_index(*c.backbone, files, 1700000000);
    REQUIRE(idx.size() == 200);
    CHECK(idx.backbone == "toy");
    CHECK(idx.embeddings.cols() == 32);
    for (std::size_t i = 0; i < idx.size(); i += 37) {
        const Image img = load_image(files[i].path);
        CHECK(idx.ids[i] == files[i].id);
        CHECK(idx.embeddings.row(static_cast<Eigen::Index>(i)) == c.backbone->encode_image(img).global.cast<float>());
    }
    idx.save(c.dir / "a.idx");
    build_index(*c.backbone, files, 1700000000).save(c.dir / "b.idx");
    CHECK(read_file_bytes(c.dir / "a.idx") == read_file_bytes(c.dir / "b.idx"));
    const RetrievalIndex back = RetrievalIndex::load(c.dir / "a.idx");
    CHECK(back.ids == idx.ids);
    CHECK(back.embeddings == idx.embeddings);
    CHECK(back.created_at == 1700000000);
    CHECK(back.find("img_005").has_value());
    CHECK_FALSE(back.find("nope").has_value());
}

TEST_CASE("index files are validated") {
    RetrievalIndex idx;
    idx.ids = {"a", "b"};
    idx.embeddings = Eigen::MatrixXf::Ones(2, 3);
    idx.backbone = "toy";
    std::vector<std::uint8_t> bytes = idx.serialize();
    CHECK_NOTHROW(RetrievalIndex::deserialize(bytes));
    std::vector<std::uint8_t> junk = bytes;
    junk.push_back(0);
    CHECK_THROWS_AS(RetrievalIndex::deserialize(junk), Error);
    junk.assign(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(RetrievalIndex::deserialize(junk), Error);
    bytes[1] = 'Q';
    CHECK_THROWS_AS(RetrievalIndex::deserialize(bytes), Error);
    idx.ids = {"a", "a"};
    CHECK_THROWS_AS(idx.validate(), Error);
    TempDir empty("noimages");
    CHECK_THROWS_AS(build_index(*make_backbone(BackboneConfig{}), list_image_files(empty.path()), 0), Error);
}

TEST_CASE("ranking matches a brute-force oracle, ties go to the smaller id") {
    std::mt19937_64 gen(3);
    RetrievalIndex idx;
    idx.backbone = "toy";
    const int n = 60;
    idx.embeddings = random_matrix(gen, n, 8).cast<float>();
    for (int i = 0; i < n; ++i) idx.ids.push_back("id_" + std::to_string(1000 - i));
    // exact duplicates force ties
    idx.embeddings.row(10) = idx.embeddings.row(3);
    idx.embeddings.row(20) = idx.embeddings.row(3);
    idx.embeddings.row(40).setZero();
    for (int trial = 0; trial < 30; ++trial) {
        Eigen::RowVectorXd q = random_matrix(gen, 1, 8);
        if (trial == 0) q = idx.embeddings.row(3).cast<double>();
        const auto hits = rank_index(idx, q, static_cast<std::size_t>(n));
        const auto want = oracle_ranking(idx, q);
        REQUIRE(hits.size() == want.size());
        for (std::size_t i = 0; i < hits.size(); ++i) CHECK(hits[i].id == want[i]);
        for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].score >= hits[i].score);
        for (const SearchHit& h : hits) {
            CHECK(h.score >= -1.0);
            CHECK(h.score <= 1.0);
            if (h.id == idx.ids[40]) CHECK(h.score == 0.0);
        }
        if (trial == 0) {
            // ids of rows 3, 10, 20 are id_997 > id_990 > id_980
            CHECK(hits[0].id == "id_980");
            CHECK(hits[1].id == "id_990");
            CHECK(hits[2].id == "id_997");
            CHECK(hits[0].score == 1.0);
        }
    }
    const Eigen::RowVectorXd q = random_matrix(gen, 1, 8);
    CHECK(rank_index(idx, q, 5).size() == 5);
    CHECK(rank_index(idx, q, 1000).size() == static_cast<std::size_t>(n));
    const std::string ex = idx.ids[7];
    for (const SearchHit& h : rank_index(idx, q, 1000, &ex)) CHECK(h.id != ex);
    CHECK(rank_index(idx, q, 1000, &ex).size() == static_cast<std::size_t>(n - 1));
    CHECK_THROWS_AS(rank_index(idx, q, 0), Error);
    CHECK_THROWS_AS(rank_index(idx, Eigen::RowVectorXd::Ones(3), 5), Error);
}

TEST_CASE("moving a candidate toward the query never lowers its rank") {
    std::mt19937_64 gen(4);
    RetrievalIndex idx;
    idx.backbone = "toy";
    idx.embeddings = random_matrix(gen, 40, 6).cast<float>();
    for (int i = 0; i < 40; ++i) idx.ids.push_back("c" + std::to_string(100 + i));
    const Eigen::RowVectorXd q = random_matrix(gen, 1, 6);
    auto rank_of = [&](const std::string& id) {
        const auto hits = rank_index(idx, q, 40);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            if (hits[i].id == id) return i;
        }
        return hits.size();
    };
    const Eigen::RowVectorXf qf = q.normalized().cast<float>();
    std::size_t prev = rank_of("c120");
    for (double t = 0.1; t <= 1.0; t += 0.1) {
        const Eigen::RowVectorXf start = idx.embeddings.row(20).normalized();
        idx.embeddings.row(20) = ((1.0 - t) * start.cast<double>() + t * qf.cast<double>()).cast<float>();
        const std::size_t now = rank_of("c120");
        CHECK(now <= prev);
        prev = now;
    }
    CHECK(prev == 0);
}

TEST_CASE("retriever composes, excludes the reference and is thread safe") {
    Corpus c(40);
    const RetrievalIndex idx = build_index(*c.backbone, list_image_files(c.images()), 0);
    const Model model(c.config);
    const Retriever ret(*c.backbone, model, idx, c.images());
    ComposedQuery q;
    q.reference_id = "img_003";
    q.modification = "has an orange background";
    q.top_k = 10;
    const SearchResult r = ret.search(q);
    REQUIRE(r.hits.size() == 10);
    const Model::Query mq = model.compose(*c.backbone, ret.reference_features("img_003"), q.modification);
    const auto direct = rank_index(idx, mq.embedding, 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(r.hits[i].id == direct[i].id);
        CHECK(r.hits[i].score == direct[i].score);
    }
    CHECK(r.query_text.find("but has an orange background.") != std::string::npos);
    CHECK(r.r >= 1);

    ComposedQuery img = q;
    img.reference_id.clear();
    img.reference_image = load_image(c.images() / "img_003.ppm");
    const SearchResult ri = ret.search(img);
    for (std::size_t i = 0; i < 10; ++i) CHECK(ri.hits[i].id == r.hits[i].id);

    q.exclude_reference = true;
    q.top_k = 1000;
    const SearchResult rx = ret.search(q);
    CHECK(rx.hits.size() == 39);
    for (const SearchHit& h : rx.hits) CHECK(h.id != "img_003");

    ComposedQuery bad = q;
    bad.reference_id = "img_999";
    try {
        ret.search(bad);
        FAIL("expected input error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::input);
        CHECK(std::string(e.what()).find("img_999") != std::string::npos);
    }
    bad = q;
    bad.modification = " ";
    CHECK_THROWS_AS(ret.search(bad), Error);

    std::vector<std::vector<std::string>> seen(4);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            ComposedQuery tq;
            tq.reference_id = "img_0" + std::to_string(10 + t);
            tq.modification = "is red";
            tq.top_k = 5;
            for (const SearchHit& h : ret.search(tq).hits) seen[static_cast<std::size_t>(t)].push_back(h.id);
        });
    }
    for (auto& th : threads) th.join();
    for (int t = 0; t < 4; ++t) {
        ComposedQuery tq;
        tq.reference_id = "img_0" + std::to_string(10 + t);
        tq.modification = "is red";
        tq.top_k = 5;
        std::vector<std::string> ids;
        for (const SearchHit& h : ret.search(tq).hits) ids.push_back(h.id);
        CHECK(ids == seen[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("retriever rejects an index of another width") {
    Corpus c(4);
    RetrievalIndex idx = build_index(*c.backbone, list_image_files(c.images()), 0);
    idx.embeddings = Eigen::MatrixXf::Ones(4, 5);
    const Model model(c.config);
    CHECK_THROWS_AS(Retriever(*c.backbone, model, idx, std::nullopt), Error);
}

TEST_CASE("phrase ranking matches the oracle") {
    std::mt19937_64 gen(6);
    const std::vector<std::string> phrases{"b", "a", "c", "d", "e", "f"};
    Eigen::MatrixXd emb = random_matrix(gen, 6, 5);
    emb.row(1) = emb.row(0);  // tie between "b" and "a"
    const Eigen::RowVectorXd q = emb.row(0);
    const auto top = rank_phrases(phrases, emb, q, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].text == "a");
    CHECK(top[1].text == "b");
    CHECK(top[0].score == doctest::Approx(1.0));
    std::vector<double> sims;
    for (Eigen::Index i = 0; i < 6; ++i) sims.push_back(oracle::cos(q, emb.row(i)));
    std::vector<double> sorted = sims;
    std::sort(sorted.rbegin(), sorted.rend());
    CHECK(top[2].score == doctest::Approx(sorted[2]).epsilon(1e-12));
    CHECK(rank_phrases(phrases, emb, q, 100).size() == 6);
    CHECK_THROWS_AS(rank_phrases({}, Eigen::MatrixXd(0, 5), q, 3), Error);
}

TEST_CASE("describe returns subject and attribute phrases") {
    Corpus c(30);
    const Model model(c.config);
    std::vector<std::string> captions;
    for (const ToyScene& s : c.corpus.scenes) captions.push_back(toy_caption(s));
    const DescriptionCorpus dc = DescriptionCorpus::build(*c.backbone, captions, LexiconTagger());
    CHECK(dc.subjects.size() == static_cast<std::size_t>(dc.subject_embeddings.rows()));
    const std::set<std::string> distinct(dc.subjects.begin(), dc.subjects.end());
    CHECK(distinct.size() == dc.subjects.size());
    const ImageFeatures f = c.backbone->encode_image(c.corpus.images[0]);
    const DescribeResult d = describe(*c.backbone, model, f, dc, 4);
    CHECK(d.subjects.size() == std::min<std::size_t>(4, dc.subjects.size()));
    CHECK(d.attributes.size() == std::min<std::size_t>(4, dc.attributes.size()));
    CHECK(d.subject_sentence == "a photo of " + std::string(kPlaceholder) + ".");
    CHECK(d.attribute_sentence.rfind("a photo with ", 0) == 0);

    const DescriptionCorpus one = DescriptionCorpus::from_phrases(*c.backbone, {"a red circle"}, {"on a mat"});
    const DescribeResult d1 = describe(*c.backbone, model, f, one, 4);
    REQUIRE(d1.subjects.size() == 1);
    CHECK(d1.subjects[0].text == "a red circle");
    REQUIRE(d1.attributes.size() == 1);
    const Eigen::RowVectorXd se = one.subject_embeddings.row(0);
    CHECK(se == c.backbone->encode_text_value("a photo of a red circle."));
}

}  // TEST_SUITE
