#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fticir/cli.hpp"
#include "fticir/errors.hpp"
#include "fticir/eval.hpp"
#include "fticir/inversion.hpp"
#include "fticir/losses.hpp"
#include "fticir/retrieval.hpp"
#include "fticir/textgen.hpp"
#include "fticir/toydata.hpp"

namespace py = pybind11;
using namespace fticir;

namespace {

std::vector<EvalTriplet> as_triplets(const std::vector<std::vector<std::string>>& targets,
                                     const std::optional<std::vector<std::vector<std::string>>>& subsets) {
    std::vector<EvalTriplet> out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        EvalTriplet t;
        t.reference = "q" + std::to_string(i);
        t.modification = "-";
        t.targets = targets[i];
        if (subsets) t.subset = subsets->at(i);
        out.push_back(std::move(t));
    }
    return out;
}

class Searcher {
public:
    Searcher(const std::filesystem::path& checkpoint, const std::filesystem::path& index,
             std::optional<std::filesystem::path> images)
        : model_(load_model(checkpoint)),
          backbone_(make_backbone(model_.backbone_config())),
          index_(RetrievalIndex::load(index)),
          retriever_(*backbone_, model_, index_, std::move(images)) {
        model_.check_backbone(*backbone_);
    }

    std::vector<std::pair<std::string, double>> search(const std::string& reference, const std::string& modification,
                                                       std::size_t top_k, bool exclude_reference) const {
        ComposedQuery q;
        q.reference_id = reference;
        q.modification = modification;
        q.top_k = top_k;
        q.exclude_reference = exclude_reference;
        py::gil_scoped_release release;
        std::vector<std::pair<std::string, double>> out;
        for (const SearchHit& h : retriever_.search(q).hits) out.emplace_back(h.id, h.score);
        return out;
    }

    std::size_t size() const { return index_.size(); }

private:
    Model model_;
    std::unique_ptr<Backbone> backbone_;
    RetrievalIndex index_;
    Retriever retriever_;
};

}  // namespace

PYBIND11_MODULE(_fticir, m) {
    m.doc() = "Composed image retrieval with fine-grained textual inversion";

    static PyObject* error = PyErr_NewException("fticir._fticir.Error", PyExc_RuntimeError, nullptr);
    m.attr("Error") = py::handle(error).inc_ref();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
        }
    });

    m.def(
        "split_caption",
        [](const std::string& caption) {
            const CaptionSplit s = split_caption(caption, LexiconTagger());
            return py::make_tuple(s.full, s.subj, s.attr);
        },
        py::arg("caption"), "Returns (full, subject, attribute) using the lexicon tagger.");
    m.def(
        "standardized_caption",
        [](const std::string& subj, const std::string& attr) {
            return standardized_caption_text({subj + (attr.empty() ? "" : " " + attr), subj, attr});
        },
        py::arg("subject"), py::arg("attribute") = "");
    m.def(
        "image_template",
        [](std::size_t r, bool no_subject_token, bool no_attribute_token) {
            TemplateOptions o;
            o.no_subject_token = no_subject_token;
            o.no_attribute_token = no_attribute_token;
            return image_template_text(r, o);
        },
        py::arg("r"), py::arg("no_subject_token") = false, py::arg("no_attribute_token") = false);
    m.def(
        "query_template",
        [](std::size_t r, const std::string& modification) { return query_template_text(r, modification); },
        py::arg("r"), py::arg("modification"));

    m.def(
        "select_attributes",
        [](const Eigen::MatrixXd& local, const Eigen::RowVectorXd& global, int k, double epsilon) {
            FilterConfig cfg;
            cfg.k = k;
            cfg.epsilon = epsilon;
            const FilterSelection s = select_attributes(local, global, cfg);
            py::dict d;
            d["sims"] = Eigen::VectorXd(s.sims);
            d["topk"] = s.topk;
            d["retained"] = s.retained;
            d["fallback"] = s.fallback;
            return d;
        },
        py::arg("local"), py::arg("global_feature"), py::arg("k") = 12, py::arg("epsilon") = 0.05);

    m.def(
        "contrastive_loss",
        [](const Eigen::MatrixXd& V, const Eigen::MatrixXd& T, double tau, bool intra) {
            return contrastive_loss(ag::Tensor::constant(V), ag::Tensor::constant(T), tau, intra).item();
        },
        py::arg("V"), py::arg("T"), py::arg("tau") = 0.2, py::arg("intra_modal_negatives") = true);
    m.def(
        "orthogonal_loss", [](const Eigen::MatrixXd& W) { return orthogonal_loss(ag::Tensor::constant(W)).item(); },
        py::arg("W"));

    m.def(
        "recall_at_k",
        [](const std::vector<Ranking>& rankings, const std::vector<std::vector<std::string>>& targets, int k) {
            return recall_at_k(rankings, as_triplets(targets, std::nullopt), k);
        },
        py::arg("rankings"), py::arg("targets"), py::arg("k"));
    m.def(
        "subset_recall_at_k",
        [](const std::vector<Ranking>& rankings, const std::vector<std::vector<std::string>>& targets,
           const std::vector<std::vector<std::string>>& subsets, int k) {
            return subset_recall_at_k(rankings, as_triplets(targets, subsets), k);
        },
        py::arg("rankings"), py::arg("targets"), py::arg("subsets"), py::arg("k"));
    m.def(
        "map_at_k",
        [](const std::vector<Ranking>& rankings, const std::vector<std::vector<std::string>>& targets, int k) {
            return map_at_k(rankings, as_triplets(targets, std::nullopt), k);
        },
        py::arg("rankings"), py::arg("targets"), py::arg("k"));

    m.def(
        "write_toy_corpus",
        [](const std::filesystem::path& out, int count, std::uint64_t seed) {
            ToyCorpusConfig cfg;
            cfg.count = count;
            cfg.seed = seed;
            ToyCorpus::generate(cfg).write(out);
        },
        py::arg("out"), py::arg("count") = 200, py::arg("seed") = 7);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one CLI invocation in-process; returns (exit_code, stdout, stderr).");

    py::class_<Searcher>(m, "Searcher")
        .def(py::init<const std::filesystem::path&, const std::filesystem::path&,
                      std::optional<std::filesystem::path>>(),
             py::arg("checkpoint"), py::arg("index"), py::arg("images") = py::none())
        .def("search", &Searcher::search, py::arg("reference"), py::arg("modification"), py::arg("top_k") = 20,
             py::arg("exclude_reference") = false)
        .def("__len__", &Searcher::size);
}
