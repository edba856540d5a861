#include <doctest.h>

#include <fstream>
#include <sstream>

#include "../support.hpp"
#include "fticir/errors.hpp"
#include "fticir/toydata.hpp"
#include "fticir/training.hpp"

using namespace fticir;
using namespace fticir::testing;

namespace {

struct Fixture {
    Config config;
    std::unique_ptr<Backbone> backbone;
    TrainingSet data;

    explicit Fixture(Config cfg, int count = 10) : config(std::move(cfg)) {
        backbone = make_backbone(BackboneConfig::from_config(config));
        ToyCorpusConfig tc;
        tc.count = count;
        tc.width = 32;
        tc.height = 32;
        const ToyCorpus corpus = ToyCorpus::generate(tc);
        CaptionFile captions;
        for (const ToyScene& s : corpus.scenes) captions.add(s.id, toy_caption(s));
        data = TrainingSet::from_images(*backbone, corpus.ids(), corpus.images, captions, LexiconTagger());
    }
};

std::vector<Eigen::MatrixXd> param_values(const Model& m) {
    std::vector<Eigen::MatrixXd> out;
    for (const NamedArray& a : m.export_parameters()) out.push_back(a.value);
    return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("AdamW matches a scalar oracle over several steps") {
    std::mt19937_64 gen(1);
    ag::Tensor p = ag::Tensor::leaf(random_matrix(gen, 2, 3), true);
    nn::ParameterList list;
    list.add("p", p);
    AdamWConfig cfg;
    AdamW opt(list, cfg);
    Eigen::MatrixXd x = p.value(), m = Eigen::MatrixXd::Zero(2, 3), v = Eigen::MatrixXd::Zero(2, 3);
    const double lr = 0.01;
    for (int t = 1; t <= 5; ++t) {
        const Eigen::MatrixXd g = random_matrix(gen, 2, 3);
        p.zero_grad();
        ag::backward(ag::sum(ag::mul(p, ag::Tensor::constant(g))));
        opt.step(lr);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x(i) *= 1.0 - lr * cfg.weight_decay;
            m(i) = cfg.beta1 * m(i) + (1 - cfg.beta1) * g(i);
            v(i) = cfg.beta2 * v(i) + (1 - cfg.beta2) * g(i) * g(i);
            const double mh = m(i) / (1 - std::pow(cfg.beta1, t));
            const double vh = v(i) / (1 - std::pow(cfg.beta2, t));
            x(i) -= lr * mh / (std::sqrt(vh) + cfg.eps);
        }
        CHECK((p.value() - x).cwiseAbs().maxCoeff() < 1e-14);
    }
    CHECK(opt.steps() == 5);
}

TEST_CASE("learning rate schedule") {
    TrainConfig t;
    CHECK(t.lr == 4e-5);
    CHECK(t.batch_size == 256);
    CHECK(lr_for_epoch(t, 1) == 4e-5);
    CHECK(lr_for_epoch(t, 9) == 4e-5);
    CHECK(lr_for_epoch(t, 10) == doctest::Approx(0.1 * lr_for_epoch(t, 9)));
    CHECK(lr_for_epoch(t, 20) == lr_for_epoch(t, 10));
    t.lr_decay_epoch = 0;
    CHECK(lr_for_epoch(t, 15) == t.lr);
    Config bad;
    bad.set("train.batch_size", "0");
    CHECK_THROWS_AS(TrainConfig::from_config(bad), Error);
    bad.set("train.batch_size", "4");
    bad.set("train.lr", "-1");
    CHECK_THROWS_AS(TrainConfig::from_config(bad), Error);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    Fixture f(small_config(), 6);
    Trainer tr(f.config, *f.backbone, f.data);
    const auto before = param_values(tr.model());
    const auto idx = all_indices(4);
    tr.train_step(idx, 0.0);
    CHECK(param_values(tr.model()) == before);
    tr.train_step(idx, 1e-2);
    CHECK(param_values(tr.model()) != before);
}

TEST_CASE("training is deterministic and never touches the backbone") {
    Fixture f(small_config(), 8);
    const std::uint64_t fp = f.backbone->weights_fingerprint();
    Trainer a(f.config, *f.backbone, f.data), b(f.config, *f.backbone, f.data);
    for (int i = 0; i < 3; ++i) {
        const StepLosses la = *a.step();
        const StepLosses lb = *b.step();
        CHECK(la.total == lb.total);
        CHECK(la.r == lb.r);
        CHECK(la.step == static_cast<std::uint64_t>(i + 1));
    }
    CHECK(param_values(a.model()) == param_values(b.model()));
    CHECK(f.backbone->weights_fingerprint() == fp);
    CHECK(a.steps_per_epoch() == 2);
    CHECK(a.total_steps() == 4);
}

TEST_CASE("evaluate is side-effect free") {
    Fixture f(small_config(), 6);
    Trainer tr(f.config, *f.backbone, f.data);
    const auto idx = all_indices(4);
    const StepLosses a = tr.evaluate(idx);
    const StepLosses b = tr.evaluate(idx);
    CHECK(a.total == b.total);
    CHECK(tr.steps_taken() == 0);
    CHECK(a.total == doctest::Approx(a.sim + a.ortho + 1.4 * (a.subj + a.attr + a.whole)));
    CHECK(a.mean_r >= 1.0);
    CHECK(a.mean_r <= 4.0);
}

TEST_CASE("checkpoint round-trips bitwise and resume continues identically") {
    Fixture f(small_config(), 10);
    Trainer a(f.config, *f.backbone, f.data);
    for (int i = 0; i < 3; ++i) a.step();
    const Checkpoint ck = a.checkpoint();
    const std::vector<std::uint8_t> bytes = ck.serialize();
    const Checkpoint back = Checkpoint::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    CHECK(back.step == 3);

    TempDir dir("ckpt");
    ck.save(dir / "c.bin");
    Trainer b(Checkpoint::load(dir / "c.bin"), *f.backbone, f.data);
    CHECK(b.steps_taken() == 3);
    CHECK(b.current_epoch() == a.current_epoch());
    CHECK(param_values(b.model()) == param_values(a.model()));
    while (!a.finished()) {
        const StepLosses la = *a.step();
        const StepLosses lb = *b.step();
        CHECK(la.total == lb.total);
        CHECK(la.step == lb.step);
    }
    CHECK(b.finished());
    CHECK_FALSE(b.step().has_value());
    CHECK(param_values(b.model()) == param_values(a.model()));

    const Model m = load_model(ck);
    CHECK(param_values(m) == param_values(Trainer(ck, *f.backbone, f.data).model()));
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
    Fixture f(small_config(), 6);
    Trainer a(f.config, *f.backbone, f.data);
    std::vector<std::uint8_t> bytes = a.checkpoint().serialize();
    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
    CHECK_THROWS_AS(Checkpoint::deserialize(truncated), Error);
    bytes[0] = 'X';
    CHECK_THROWS_AS(Checkpoint::deserialize(bytes), Error);
    Checkpoint ck = a.checkpoint();
    ck.backbone_fingerprint ^= 1;
    CHECK_THROWS_AS(Trainer(ck, *f.backbone, f.data), Error);
    Config other = small_config();
    other.set("backbone.d_embed", "24");
    const auto bb = make_backbone(BackboneConfig::from_config(other));
    CHECK_THROWS_AS(load_model(a.checkpoint()).check_backbone(*bb), Error);
}

TEST_CASE("fit writes logs and per-epoch checkpoints") {
    Fixture f(small_config(), 6);
    Trainer tr(f.config, *f.backbone, f.data);
    TempDir dir("fit");
    int seen = 0;
    Trainer::FitOptions opts;
    opts.out_dir = dir.path();
    opts.on_step = [&](const StepLosses&) { ++seen; };
    const auto last = tr.fit(opts);
    CHECK(seen == 4);
    CHECK(std::filesystem::exists(last));
    CHECK(std::filesystem::exists(dir / "ckpt_epoch1.bin"));
    CHECK(std::filesystem::exists(dir / "ckpt_epoch2.bin"));
    CHECK(std::filesystem::exists(dir / "config.cfg"));
    std::ifstream log(dir / "metrics.tsv");
    std::string header, line;
    std::getline(log, header);
    CHECK(header == metrics_header());
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 4);
    std::ifstream hist(dir / "r_histogram.tsv");
    CHECK(hist.good());
    std::uint64_t total = 0;
    for (std::uint64_t c : tr.r_histogram()) total += c;
    CHECK(total == 12);  // one entry per sample per epoch
}

TEST_CASE("data errors") {
    Fixture f(small_config(), 4);
    TrainingSet empty;
    try {
        Trainer tr(f.config, *f.backbone, empty);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
    const ToyCorpus corpus = ToyCorpus::generate(ToyCorpusConfig{2, 16, 16, 1});
    CaptionFile captions;
    captions.add(corpus.scenes[0].id, toy_caption(corpus.scenes[0]));
    try {
        TrainingSet::from_images(*f.backbone, corpus.ids(), corpus.images, captions, LexiconTagger());
        FAIL("expected lookup error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::lookup);
        CHECK(std::string(e.what()).find(corpus.scenes[1].id) != std::string::npos);
    }
}

TEST_CASE("ablation flags map onto losses and templates") {
    CHECK_THROWS_AS(Ablations::parse({"no_such_flag"}), Error);
    const Ablations a = Ablations::parse({"no_filter", "no_ortho"});
    CHECK(a.to_string() == "no_filter,no_ortho");
    const FilterConfig eff = a.effective_filter(FilterConfig{12, 0.05}, 24);
    CHECK(eff.k == 24);
    CHECK(eff.epsilon < -1.0 + 1e-12);

    auto losses = [](const std::string& flags) {
        Config c = small_config();
        c.set("train.ablations", flags);
        Fixture f(c, 4);
        Trainer tr(f.config, *f.backbone, f.data);
        return tr.evaluate(all_indices(4));
    };
    const StepLosses full = losses("");
    CHECK(full.ortho > 0.0);
    CHECK(full.subj > 0.0);
    CHECK(losses("no_ortho").ortho == 0.0);
    const StepLosses nf = losses("no_filter");
    for (std::size_t r : nf.r) CHECK(r == 8);
    CHECK(losses("no_subject_reg").subj == 0.0);
    CHECK(losses("no_attribute_reg").attr == 0.0);
    CHECK(losses("no_whole_reg").whole == 0.0);
    const StepLosses nst = losses("no_subject_token");
    CHECK(nst.subj == 0.0);
    CHECK(nst.attr > 0.0);
    const StepLosses nat = losses("no_attribute_token");
    CHECK(nat.attr == 0.0);
    CHECK(nat.ortho > 0.0);
    Config both = small_config();
    both.set("train.ablations", "no_subject_token,no_attribute_token");
    CHECK_THROWS_AS(Model{both}, Error);
}

TEST_CASE("full training loss gradient matches central differences at toy dims") {
    Fixture f(gradient_config(), 4);
    Trainer tr(f.config, *f.backbone, f.data);
    std::vector<const TrainSample*> batch;
    for (const TrainSample& s : f.data.samples) batch.push_back(&s);
    nn::ParameterList params = tr.model().network().parameters();
    std::vector<std::pair<std::string, ag::Tensor>> leaves(params.items().begin(), params.items().end());
    const LossWeights w;
    auto loss = [&] { return batch_losses(tr.model(), *f.backbone, batch, w, {}).total; };
    const auto checks = check_gradients(loss, leaves, 1e-5, 6);
    REQUIRE(!checks.empty());
    for (const auto& c : checks) {
        INFO(c.name << " rel " << c.rel_error);
        CHECK(c.rel_error <= 1e-4);
    }
}

}  // TEST_SUITE
