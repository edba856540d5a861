#include <doctest.h>

#include <fstream>

#include "../support.hpp"
#include "fticir/errors.hpp"
#include "fticir/eval.hpp"
#include "fticir/toydata.hpp"

using namespace fticir;
using namespace fticir::testing;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p) << text;
}

std::vector<EvalTriplet> as_triplets(const std::vector<std::vector<std::string>>& targets,
                                     const std::vector<std::vector<std::string>>* subsets = nullptr) {
    std::vector<EvalTriplet> out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        EvalTriplet t;
        t.reference = "ref" + std::to_string(i);
        t.modification = "m";
        t.targets = targets[i];
        if (subsets) t.subset = (*subsets)[i];
        out.push_back(t);
    }
    return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("average precision of a two-target ranking") {
    CHECK(average_precision_at_k({"a", "x", "b", "y", "z"}, {"a", "b"}, 5) == doctest::Approx(5.0 / 6.0));
    CHECK(average_precision_at_k({"t1", "x", "t2"}, {"t1", "t2"}, 3) == doctest::Approx(5.0 / 6.0));
    CHECK(average_precision_at_k({"x", "y"}, {"t1"}, 2) == 0.0);
    // duplicated targets count once; normaliser is min(K, |targets|)
    CHECK(average_precision_at_k({"t1", "t2"}, {"t1", "t1", "t2"}, 1) == 1.0);
    CHECK(average_precision_at_k({"x", "t1"}, {"t1", "t2", "t3"}, 2) == doctest::Approx(0.25));
    CHECK_THROWS_AS(average_precision_at_k({"a"}, {"a"}, 0), Error);
}

TEST_CASE("metrics match the brute-force oracle on 200 random instances") {
    std::mt19937_64 gen(200);
    std::vector<std::string> pool;
    for (int i = 0; i < 30; ++i) pool.push_back("p" + std::to_string(i));
    std::vector<Ranking> rankings;
    std::vector<std::vector<std::string>> targets, subsets;
    for (int q = 0; q < 200; ++q) {
        Ranking r = pool;
        std::shuffle(r.begin(), r.end(), gen);
        r.resize(10 + gen() % 21);
        rankings.push_back(r);
        std::vector<std::string> t;
        const int nt = 1 + static_cast<int>(gen() % 4);
        for (int i = 0; i < nt; ++i) t.push_back(pool[gen() % pool.size()]);
        if (q % 7 == 0) t.push_back("absent");
        targets.push_back(t);
        std::vector<std::string> s;
        for (const std::string& id : pool) {
            if (gen() % 3 == 0) s.push_back(id);
        }
        s.push_back(t[0]);
        subsets.push_back(s);
    }
    const auto trip = as_triplets(targets, &subsets);
    for (int k : {1, 2, 3, 5, 10, 25, 50}) {
        INFO("k " << k);
        CHECK(recall_at_k(rankings, trip, k) == doctest::Approx(oracle::recall(rankings, targets, k)).epsilon(1e-12));
        CHECK(subset_recall_at_k(rankings, trip, k) ==
              doctest::Approx(oracle::subset_recall(rankings, targets, subsets, k)).epsilon(1e-12));
        CHECK(map_at_k(rankings, trip, k) == doctest::Approx(oracle::map(rankings, targets, k)).epsilon(1e-12));
    }
    // monotone in K
    double prev_r = 0.0;
    for (int k = 1; k <= 30; ++k) {
        const double r = recall_at_k(rankings, trip, k);
        CHECK(r >= prev_r);
        prev_r = r;
    }
}

TEST_CASE("metric argument errors") {
    const auto trip = as_triplets({{"a"}});
    CHECK_THROWS_AS(recall_at_k({{"a"}}, trip, 0), Error);
    CHECK_THROWS_AS(recall_at_k({{"a"}, {"b"}}, trip, 1), Error);
    CHECK_THROWS_AS(subset_recall_at_k({{"a"}}, trip, 1), Error);  // no subset
}

TEST_CASE("CIRR suite on ten synthetic queries") {
    // target at rank q+1 of a 12-id ranking; the subset keeps the target and
    // two ids ranked after it
    std::vector<Ranking> rankings;
    std::vector<std::vector<std::string>> targets, subsets;
    for (int q = 0; q < 10; ++q) {
        Ranking r;
        for (int i = 0; i < 12; ++i) r.push_back("c" + std::to_string(100 + i));
        rankings.push_back(r);
        targets.push_back({r[static_cast<std::size_t>(q)]});
        subsets.push_back({r[static_cast<std::size_t>(q)], r[10], r[11]});
    }
    const MetricReport rep = metric_suite("cirr", DatasetFormat::cirr, rankings, as_triplets(targets, &subsets));
    CHECK(*rep.get("R@1") == doctest::Approx(0.1));
    CHECK(*rep.get("R@5") == doctest::Approx(0.5));
    CHECK(*rep.get("R@10") == doctest::Approx(1.0));
    CHECK(*rep.get("R@50") == doctest::Approx(1.0));
    CHECK(*rep.get("R_subset@1") == doctest::Approx(1.0));
    CHECK(*rep.get("Avg") == doctest::Approx(0.75));
    CHECK(rep.queries == 10);
    CHECK_FALSE(rep.get("mAP@5").has_value());
}

TEST_CASE("FashionIQ suite averages categories") {
    std::vector<Ranking> rankings;
    std::vector<EvalTriplet> trip;
    const std::vector<std::string> cats{"dress", "shirt", "toptee"};
    for (int q = 0; q < 6; ++q) {
        Ranking r;
        for (int i = 0; i < 60; ++i) r.push_back("f" + std::to_string(i));
        rankings.push_back(r);
        EvalTriplet t;
        t.reference = "ref";
        t.modification = "m";
        // dress hits at 1 and 20, shirt at 55 and 60 (outside 50), toptee at 3 and 40
        const int pos[6] = {0, 19, 54, 59, 2, 39};
        t.targets = {r[static_cast<std::size_t>(pos[q])]};
        t.group = cats[static_cast<std::size_t>(q / 2)];
        trip.push_back(t);
    }
    const MetricReport rep = metric_suite("fashioniq", DatasetFormat::fashioniq, rankings, trip);
    CHECK(*rep.get("dress/R@10") == doctest::Approx(0.5));
    CHECK(*rep.get("dress/R@50") == doctest::Approx(1.0));
    CHECK(*rep.get("shirt/R@50") == doctest::Approx(0.0));
    CHECK(*rep.get("toptee/R@10") == doctest::Approx(0.5));
    CHECK(*rep.get("Avg/R@10") == doctest::Approx(1.0 / 3.0));
    CHECK(*rep.get("Avg/R@50") == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("CIRCO suite and report formatting") {
    const std::vector<Ranking> rankings{{"a", "b", "c", "d"}, {"x", "y", "z", "w"}};
    std::vector<EvalTriplet> trip = as_triplets({{"a", "c"}, {"w"}});
    const MetricReport rep = metric_suite("circo", DatasetFormat::circo, rankings, trip);
    CHECK(*rep.get("mAP@5") == doctest::Approx((5.0 / 6.0 + 0.25) / 2.0));
    CHECK(rep.get("mAP@50").has_value());
    const std::string tsv = rep.to_tsv();
    CHECK(tsv.rfind("dataset\tcirco\nqueries\t2\n", 0) == 0);
    CHECK(tsv.find("mAP@5\t0.541667\n") != std::string::npos);
}

TEST_CASE("canonical triplets: parsing and errors") {
    const auto t = parse_canonical(
        "{\"reference\":\"a\",\"modification\":\"is red\",\"targets\":[\"b\",\"c\"],\"subset\":[\"b\",\"d\"]}\n\n"
        "{\"reference\":\"c\",\"modification\":\"is blue\",\"targets\":[\"d\"]}\n",
        "t.jsonl");
    REQUIRE(t.size() == 2);
    CHECK(t[0].targets == std::vector<std::string>{"b", "c"});
    CHECK(t[0].subset.has_value());
    CHECK_FALSE(t[1].subset.has_value());
    try {
        parse_canonical("{\"reference\":\"a\",\"modification\":\"m\",\"targets\":[\"b\"]}\n{oops\n", "t.jsonl");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
        CHECK(std::string(e.what()).find("t.jsonl:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_canonical("{\"reference\":\"a\",\"targets\":[\"b\"]}\n", "x"), Error);
    try {
        parse_canonical("{\"reference\":\"a\",\"modification\":\"m\",\"targets\":[\"a\"]}\n", "x");
        FAIL("expected data error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
    CHECK(parse_dataset_format("cirr") == DatasetFormat::cirr);
    CHECK_THROWS_AS(parse_dataset_format("imagenet"), Error);
}

TEST_CASE("FashionIQ adapter joins captions and reads pools") {
    TempDir dir("fiq");
    write_text(dir / "captions/cap.dress.val.json",
               R"([{"candidate":"d1","target":"d2","captions":["is longer","has a floral print"]},
                   {"candidate":"d3","target":"d1","captions":["is red"]},
                   {"candidate":"d2","target":"d3","captions":["is shorter","is blue"]}])");
    write_text(dir / "image_splits/split.dress.val.json", R"(["d1","d2","d3","d4"])");
    LoadOptions opt;
    opt.split = "val";
    opt.fashioniq_categories = {"dress"};
    const Dataset ds = load_dataset(dir.path(), DatasetFormat::fashioniq, opt);
    REQUIRE(ds.triplets.size() == 3);
    CHECK(ds.triplets[0].modification == "is longer and has a floral print");
    CHECK(ds.triplets[1].modification == "is red");
    CHECK(ds.triplets[0].group == "dress");
    CHECK(ds.pools.at("dress").size() == 4);
    opt.fashioniq_joiner = ", ";
    CHECK(load_dataset(dir.path(), DatasetFormat::fashioniq, opt).triplets[2].modification == "is shorter, is blue");
    opt.fashioniq_categories = {"shirt"};
    CHECK_THROWS_AS(load_dataset(dir.path(), DatasetFormat::fashioniq, opt), Error);
}

TEST_CASE("CIRR adapter builds subsets without the reference") {
    TempDir dir("cirr");
    write_text(dir / "captions/cap.rc2.val.json",
               R"([{"pairid":1,"reference":"r1","caption":"add a dog","target_hard":"t1",
                    "img_set":{"id":0,"members":["r1","t1","x1","x2"]}}])");
    write_text(dir / "image_splits/split.rc2.val.json", R"({"r1":"./a.png","t1":"./b.png","x1":"c","x2":"d"})");
    LoadOptions opt;
    opt.split = "val";
    const Dataset ds = load_dataset(dir.path(), DatasetFormat::cirr, opt);
    REQUIRE(ds.triplets.size() == 1);
    CHECK(ds.triplets[0].targets == std::vector<std::string>{"t1"});
    CHECK(*ds.triplets[0].subset == std::vector<std::string>{"t1", "x1", "x2"});
    CHECK(ds.pools.at("").size() == 4);
    write_text(dir / "captions/cap.rc2.test1.json", R"([{"reference":"r1","caption":"add a dog"}])");
    opt.split = "test1";
    try {
        load_dataset(dir.path(), DatasetFormat::cirr, opt);
        FAIL("expected data error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
    }
}

TEST_CASE("CIRCO adapter pads integer ids") {
    TempDir dir("circo");
    write_text(dir / "annotations/val.json",
               R"([{"id":0,"reference_img_id":42,"target_img_id":7,"relative_caption":"is at night",
                    "gt_img_ids":[7,9]}])");
    LoadOptions opt;
    opt.split = "val";
    const Dataset ds = load_dataset(dir.path(), DatasetFormat::circo, opt);
    REQUIRE(ds.triplets.size() == 1);
    CHECK(ds.triplets[0].reference == "000000000042");
    CHECK(ds.triplets[0].targets == std::vector<std::string>{"000000000007", "000000000009"});
    CHECK(ds.triplets[0].modification == "is at night");
}

TEST_CASE("evaluate ranks the index and is reproducible") {
    TempDir dir("evaluate");
    ToyCorpusConfig tc;
    tc.count = 30;
    const ToyCorpus corpus = ToyCorpus::generate(tc);
    corpus.write(dir.path());
    Config cfg;
    cfg.set("backbone.name", "toy");
    const auto bb = make_backbone(BackboneConfig::from_config(cfg));
    const Model model(cfg);
    const RetrievalIndex idx = build_index(*bb, list_image_files(dir / "images"), 0);
    const Retriever ret(*bb, model, idx, dir / "images");
    const Dataset ds = load_dataset(dir / "triplets.jsonl", DatasetFormat::canonical);
    REQUIRE(!ds.triplets.empty());
    const MetricReport a = evaluate(ds, DatasetFormat::canonical, ret);
    const MetricReport b = evaluate(ds, DatasetFormat::canonical, ret);
    CHECK(a.to_tsv() == b.to_tsv());
    CHECK(a.queries == ds.triplets.size());
    for (const auto& [name, v] : a.metrics) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(*a.get("R@50") == 1.0);  // every target is among the 29 candidates

    Dataset missing = ds;
    missing.triplets[0].targets = {"img_zzz"};
    try {
        evaluate(missing, DatasetFormat::canonical, ret);
        FAIL("expected data error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("img_zzz") != std::string::npos);
    }
}

}  // TEST_SUITE
