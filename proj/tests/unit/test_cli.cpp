#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "../support.hpp"
#include "fticir/cli.hpp"
#include "fticir/toydata.hpp"

using namespace fticir;
using namespace fticir::testing;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string f;
    while (std::getline(in, f, '\t')) out.push_back(f);
    return out;
}

// A trained checkpoint and index over a 24-image corpus, shared by the cases.
struct Workspace {
    TempDir dir{"cli"};
    std::string images, captions, ckpt, index, triplets;

    Workspace() {
        ToyCorpusConfig tc;
        tc.count = 24;
        ToyCorpus::generate(tc).write(dir.path());
        images = (dir / "images").string();
        captions = (dir / "captions.tsv").string();
        triplets = (dir / "triplets.jsonl").string();
        const Run t = run({"train", "--images", images, "--captions", captions, "--out", (dir / "run").string(),
                           "--quiet", "--set", "train.epochs=1", "--set", "train.batch_size=12", "--set",
                           "train.lr=1e-3"});
        REQUIRE_MESSAGE(t.code == 0, t.err);
        ckpt = (dir / "run" / "last.bin").string();
        index = (dir / "toy.idx").string();
        const Run i = run({"index", "--images", images, "--ckpt", ckpt, "--out", index, "--created-at", "0"});
        REQUIRE_MESSAGE(i.code == 0, i.err);
    }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

int system_exit(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2, help exits 0") {
    const Run none = run({});
    CHECK(none.code == 2);
    const Run unknown = run({"frobnicate"});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.rfind("error\tusage\tunknown verb frobnicate", 0) == 0);
    const Run missing = run({"search", "--index", "x"});
    CHECK(missing.code == 2);
    CHECK(missing.err.rfind("error\tusage\t", 0) == 0);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"search", "--help"}).code == 0);
    CHECK(!cli::usage().empty());
}

TEST_CASE("the installed binary reports the same exit codes") {
    const std::string bin = FTICIR_CLI_BINARY;
    CHECK(system_exit(bin + " --help") == 0);
    CHECK(system_exit(bin + " frobnicate") == 2);
    CHECK(system_exit(bin + " index --images /nonexistent/dir --out /tmp/x.idx") == 1);
}

TEST_CASE("train writes a checkpoint and a metrics log") {
    Workspace& w = workspace();
    CHECK(std::filesystem::exists(w.ckpt));
    std::ifstream log(w.dir / "run" / "metrics.tsv");
    std::string header;
    std::getline(log, header);
    CHECK(header.rfind("step\t", 0) == 0);
    const Run bad = run({"train", "--images", w.images, "--captions", (w.dir / "nope.tsv").string(), "--out",
                         (w.dir / "run2").string(), "--quiet"});
    CHECK(bad.code == 1);
    CHECK(bad.err.rfind("error\t", 0) == 0);
}

TEST_CASE("index is reproducible") {
    Workspace& w = workspace();
    const std::string again = (w.dir / "again.idx").string();
    const Run r = run({"index", "--images", w.images, "--ckpt", w.ckpt, "--out", again, "--created-at", "0"});
    REQUIRE(r.code == 0);
    CHECK(fields(lines(r.out).back()) == std::vector<std::string>{"index", again, "24"});
    CHECK(read_file_bytes(again) == read_file_bytes(w.index));
}

TEST_CASE("search prints ranked lines and errors on an unknown reference") {
    Workspace& w = workspace();
    const Run r = run({"search", "--index", w.index, "--ckpt", w.ckpt, "--images", w.images, "--ref", "img_003",
                       "--mod", "has an orange background", "--top-k", "5"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto ls = lines(r.out);
    REQUIRE(ls.size() == 5);
    double prev = 2.0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const auto f = fields(ls[i]);
        REQUIRE(f.size() == 3);
        CHECK(f[0] == std::to_string(i + 1));
        CHECK(f[1].rfind("img_", 0) == 0);
        const double s = std::stod(f[2]);
        CHECK(s <= prev);
        prev = s;
        CHECK(f[2].size() - f[2].find('.') - 1 == 6);
    }
    const Run ex = run({"search", "--index", w.index, "--ckpt", w.ckpt, "--images", w.images, "--ref", "img_003",
                        "--mod", "is red", "--top-k", "100", "--exclude-ref"});
    CHECK(lines(ex.out).size() == 23);
    CHECK(ex.out.find("\timg_003\t") == std::string::npos);
    const Run img = run({"search", "--index", w.index, "--ckpt", w.ckpt, "--ref-image",
                         (w.dir / "images" / "img_003.ppm").string(), "--mod", "has an orange background", "--top-k",
                         "5"});
    CHECK(img.out == r.out);
    const Run bad = run({"search", "--index", w.index, "--ckpt", w.ckpt, "--images", w.images, "--ref", "img_999",
                         "--mod", "is red"});
    CHECK(bad.code == 1);
    CHECK(bad.err.rfind("error\tinput\t", 0) == 0);
}

TEST_CASE("evaluate output is identical across reruns") {
    Workspace& w = workspace();
    const std::vector<std::string> args{"evaluate", "--dataset", "canonical", "--data", w.triplets, "--index",
                                        w.index,    "--ckpt",    w.ckpt,      "--images", w.images};
    const Run a = run(args);
    const Run b = run(args);
    REQUIRE_MESSAGE(a.code == 0, a.err);
    CHECK(a.out == b.out);
    CHECK(a.out.rfind("dataset\ttriplets\n", 0) == 0);  // canonical sets are named by file stem
    CHECK(a.out.find("\nR@10\t") != std::string::npos);
    CHECK(a.out.find("\nmAP@5\t") != std::string::npos);
    const std::string report = (w.dir / "report.tsv").string();
    std::vector<std::string> with_out = args;
    with_out.insert(with_out.end(), {"--out", report});
    REQUIRE(run(with_out).code == 0);
    std::ifstream in(report);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == a.out);
}

TEST_CASE("caption and describe") {
    Workspace& w = workspace();
    const Run c = run({"caption", "--captions", w.captions, "--id", "img_001"});
    REQUIRE_MESSAGE(c.code == 0, c.err);
    const auto f = fields(lines(c.out).back());
    REQUIRE(f.size() == 4);
    CHECK(f[0] == "img_001");
    CHECK(f[3].rfind("a photo of " + f[1], 0) == 0);

    const Run d = run({"describe", "--ckpt", w.ckpt, "--images", w.images, "--ref", "img_001", "--captions",
                       w.captions});
    REQUIRE_MESSAGE(d.code == 0, d.err);
    int subj = 0, attr = 0;
    for (const std::string& l : lines(d.out)) {
        const auto lf = fields(l);
        if (lf[0] == "subject") ++subj;
        if (lf[0] == "attribute") ++attr;
    }
    CHECK(subj == 4);
    CHECK(attr == 4);
}

TEST_CASE("config file and overrides") {
    Workspace& w = workspace();
    const std::string cfg = (w.dir / "cli.cfg").string();
    std::ofstream(cfg) << "paths.index = " << w.index << "\npaths.checkpoint = " << w.ckpt << "\n";
    const Run r = run({"search", "--config", cfg, "--images", w.images, "--ref", "img_002", "--mod", "is red",
                       "--top-k", "3"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(lines(r.out).size() == 3);
    const Run bad = run({"search", "--config", (w.dir / "missing.cfg").string(), "--ref", "img_002", "--mod", "x"});
    CHECK(bad.code == 1);
}

}  // TEST_SUITE
