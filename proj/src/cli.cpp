#include "fticir/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "fticir/errors.hpp"
#include "fticir/eval.hpp"
#include "fticir/model.hpp"
#include "fticir/retrieval.hpp"
#include "fticir/service.hpp"
#include "fticir/textgen.hpp"
#include "fticir/training.hpp"

namespace fticir::cli {

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
};

Config load_config(const Common& common) {
    Config cfg;
    std::string path = common.config_path;
    if (path.empty()) {
        if (const char* env = std::getenv("FTICIR_CONFIG"); env != nullptr) path = env;
    }
    if (!path.empty()) cfg = Config::load(path);
    for (const std::string& o : common.overrides) cfg.apply_override(o);
    return cfg;
}

std::string pick(const std::string& flag, const Config& cfg, const std::string& key) {
    return flag.empty() ? cfg.get_string(key, "") : flag;
}

std::string need(const std::string& flag, const Config& cfg, const std::string& key, const std::string& name) {
    std::string v = pick(flag, cfg, key);
    require(!v.empty(), ErrorKind::config, name + " is required (flag or config key " + key + ")");
    return v;
}

std::shared_ptr<const Tagger> make_tagger(const std::string& table) {
    auto lexicon = std::make_shared<const LexiconTagger>();
    if (table.empty()) return lexicon;
    return std::make_shared<const ExternalTagger>(ExternalTagger::load_table(table, lexicon));
}

std::int64_t resolve_created_at(const std::optional<std::int64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const long long v = std::strtoll(env, &end, 10);
        require(end != nullptr && *end == '\0', ErrorKind::config, "SOURCE_DATE_EPOCH is not an integer");
        return v;
    }
    return static_cast<std::int64_t>(std::time(nullptr));
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    return s;
}

struct Loaded {
    std::unique_ptr<Backbone> backbone;
    std::optional<Model> model;
};

Loaded load_checkpoint(const std::string& path) {
    Loaded l;
    l.model.emplace(load_model(std::filesystem::path(path)));
    l.backbone = make_backbone(l.model->backbone_config());
    l.model->check_backbone(*l.backbone);
    return l;
}

void check_index_backbone(const RetrievalIndex& index, const Backbone& backbone) {
    require(index.backbone == backbone.config().name, ErrorKind::config,
            "index was built with backbone " + index.backbone + ", checkpoint uses " + backbone.config().name);
}

ComposedQuery make_query(const std::string& ref, const std::string& ref_image, const std::string& mod,
                         std::size_t top_k, bool exclude) {
    require(ref.empty() != ref_image.empty(), ErrorKind::input, "exactly one of --ref or --ref-image is required");
    ComposedQuery q;
    q.reference_id = ref;
    if (!ref_image.empty()) q.reference_image = load_image(ref_image);
    q.modification = mod;
    q.top_k = top_k;
    q.exclude_reference = exclude;
    return q;
}

Service* g_service = nullptr;

extern "C" void handle_stop(int) {
    if (g_service != nullptr) g_service->stop();
}

}  // namespace

std::string usage() {
    return "usage: fticir <verb> [options]\n"
           "verbs: train, caption, index, search, evaluate, describe, serve\n"
           "common: --config FILE (default $FTICIR_CONFIG), --set key=value (repeatable)\n"
           "run `fticir <verb> --help` for the options of a verb\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Zero-shot composed image retrieval toolkit", "fticir"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.set_help_flag("-h,--help", "Show help");
    Common common;
    app.add_option("--config", common.config_path, "Config file");
    app.add_option("--set", common.overrides, "Override key=value")->allow_extra_args(false);

    // train
    std::string t_images, t_captions, t_out, t_resume, t_tagger;
    bool t_quiet = false;
    auto* train = app.add_subcommand("train", "Train the inversion network");
    train->add_option("--images", t_images, "Image directory (data.images)");
    train->add_option("--captions", t_captions, "Caption file id<TAB>caption (data.captions)");
    train->add_option("--out", t_out, "Output directory (train.out_dir)");
    train->add_option("--resume", t_resume, "Checkpoint to continue from");
    train->add_option("--tagger-table", t_tagger, "word<TAB>TAG table (text.tagger_table)");
    train->add_flag("--quiet", t_quiet, "Do not print per-step metrics");

    // caption
    std::string c_captions, c_images, c_tagger;
    std::vector<std::string> c_ids;
    auto* caption = app.add_subcommand("caption", "Split captions and print standardized captions");
    caption->add_option("--captions", c_captions, "Caption file (data.captions)");
    caption->add_option("--images", c_images, "Restrict to the ids of this image directory");
    caption->add_option("--id", c_ids, "Restrict to these ids");
    caption->add_option("--tagger-table", c_tagger, "word<TAB>TAG table (text.tagger_table)");

    // index
    std::string i_images, i_out, i_ckpt;
    std::optional<std::int64_t> i_created;
    auto* index = app.add_subcommand("index", "Encode an image directory into an index file");
    index->add_option("--images", i_images, "Image directory (data.images)");
    index->add_option("--out", i_out, "Index file to write (paths.index)");
    index->add_option("--ckpt", i_ckpt, "Take the backbone from this checkpoint (paths.checkpoint)");
    index->add_option("--created-at", i_created, "Creation timestamp (default $SOURCE_DATE_EPOCH, else now)");

    // search
    std::string s_index, s_ckpt, s_images, s_ref, s_ref_image, s_mod;
    std::size_t s_top = 20;
    bool s_exclude = false;
    auto* search = app.add_subcommand("search", "Composed query against an index");
    search->add_option("--index", s_index, "Index file (paths.index)");
    search->add_option("--ckpt", s_ckpt, "Checkpoint (paths.checkpoint)");
    search->add_option("--images", s_images, "Image directory for reference ids (data.images)");
    search->add_option("--ref", s_ref, "Reference image id");
    search->add_option("--ref-image", s_ref_image, "Reference image file");
    search->add_option("--mod", s_mod, "Modification text")->required();
    search->add_option("--top-k", s_top, "Results to print")->check(CLI::PositiveNumber);
    search->add_flag("--exclude-ref", s_exclude, "Drop the reference id from the ranking");

    // evaluate
    std::string e_dataset, e_data, e_split = "test", e_index, e_ckpt, e_images, e_joiner = " and ", e_out;
    std::vector<std::string> e_categories;
    bool e_keep_ref = false;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Benchmark metrics over a triplet set");
    evaluate_cmd->add_option("--dataset", e_dataset, "canonical, fashioniq, cirr or circo")->required();
    evaluate_cmd->add_option("--data", e_data, "Dataset root, or the JSON-lines file for canonical (eval.data)");
    evaluate_cmd->add_option("--split", e_split, "Split name");
    evaluate_cmd->add_option("--index", e_index, "Index file (paths.index)");
    evaluate_cmd->add_option("--ckpt", e_ckpt, "Checkpoint (paths.checkpoint)");
    evaluate_cmd->add_option("--images", e_images, "Image directory (data.images)");
    evaluate_cmd->add_option("--joiner", e_joiner, "FashionIQ caption joiner");
    evaluate_cmd->add_option("--category", e_categories, "FashionIQ categories");
    evaluate_cmd->add_flag("--keep-ref", e_keep_ref, "Keep the reference image among the candidates");
    evaluate_cmd->add_option("--out", e_out, "Also write the report here");

    // describe
    std::string d_ckpt, d_images, d_ref, d_ref_image, d_captions, d_tagger;
    std::size_t d_top = 4;
    auto* describe_cmd = app.add_subcommand("describe", "Nearest real words for an image's pseudo-words");
    describe_cmd->add_option("--ckpt", d_ckpt, "Checkpoint (paths.checkpoint)");
    describe_cmd->add_option("--images", d_images, "Image directory (data.images)");
    describe_cmd->add_option("--ref", d_ref, "Image id");
    describe_cmd->add_option("--ref-image", d_ref_image, "Image file");
    describe_cmd->add_option("--captions", d_captions, "Caption file the phrases come from (data.captions)");
    describe_cmd->add_option("--tagger-table", d_tagger, "word<TAB>TAG table (text.tagger_table)");
    describe_cmd->add_option("--top", d_top, "Phrases per list")->check(CLI::PositiveNumber);

    // serve
    std::string v_ckpt, v_index, v_images, v_host;
    std::optional<int> v_port;
    auto* serve = app.add_subcommand("serve", "HTTP retrieval service");
    serve->add_option("--ckpt", v_ckpt, "Checkpoint (service.checkpoint)");
    serve->add_option("--index", v_index, "Index file (service.index)");
    serve->add_option("--images", v_images, "Image directory (service.images)");
    serve->add_option("--host", v_host, "Bind address (service.host)");
    serve->add_option("--port", v_port, "Port, 0 for any (service.port)");

    static const std::set<std::string> verbs{"train", "caption", "index", "search", "evaluate", "describe", "serve"};
    if (!args.empty() && args.front().rfind("-", 0) != 0 && verbs.count(args.front()) == 0) {
        err << "error\tusage\tunknown verb " << one_line(args.front()) << "\n" << usage();
        return 2;
    }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error\tusage\t" << one_line(e.what()) << "\n" << usage();
        return 2;
    }

    try {
        const Config cfg = load_config(common);
        if (train->parsed()) {
            const std::string images = need(t_images, cfg, "data.images", "--images");
            const std::string captions = need(t_captions, cfg, "data.captions", "--captions");
            const auto tagger = make_tagger(pick(t_tagger, cfg, "text.tagger_table"));
            std::optional<Checkpoint> resume;
            Config run_cfg = cfg;
            if (!t_resume.empty()) {
                resume = Checkpoint::load(t_resume);
                run_cfg = resume->config;
            }
            auto backbone = make_backbone(BackboneConfig::from_config(run_cfg));
            const CaptionFile caption_file = CaptionFile::load(captions);
            const TrainingSet data =
                TrainingSet::build(*backbone, list_image_files(images), caption_file, *tagger, &err);
            std::unique_ptr<Trainer> trainer = resume ? std::make_unique<Trainer>(*resume, *backbone, data)
                                                      : std::make_unique<Trainer>(run_cfg, *backbone, data);
            Trainer::FitOptions fit;
            fit.out_dir = t_out;
            fit.resume_log = resume.has_value();
            if (!t_quiet) {
                out << metrics_header() << "\n";
                fit.on_step = [&out](const StepLosses& s) { out << format_metrics_line(s) << "\n" << std::flush; };
            }
            const std::filesystem::path last = trainer->fit(fit);
            out << "checkpoint\t" << last.string() << "\n";
        } else if (caption->parsed()) {
            const CaptionFile file = CaptionFile::load(need(c_captions, cfg, "data.captions", "--captions"));
            const auto tagger = make_tagger(pick(c_tagger, cfg, "text.tagger_table"));
            std::vector<std::string> ids = c_ids;
            if (!c_images.empty()) {
                for (const ImageFile& f : list_image_files(c_images)) ids.push_back(f.id);
            }
            if (ids.empty()) ids = file.ids();
            for (const std::string& id : ids) {
                const CaptionSplit s = split_caption(file.caption(id), *tagger);
                out << id << "\t" << s.subj << "\t" << s.attr << "\t" << standardized_caption_text(s) << "\n";
            }
        } else if (index->parsed()) {
            const std::string images = need(i_images, cfg, "data.images", "--images");
            const std::string target = need(i_out, cfg, "paths.index", "--out");
            const std::string ckpt = pick(i_ckpt, cfg, "paths.checkpoint");
            std::unique_ptr<Backbone> backbone;
            if (!ckpt.empty()) {
                backbone = load_checkpoint(ckpt).backbone;
            } else {
                backbone = make_backbone(BackboneConfig::from_config(cfg));
            }
            const RetrievalIndex built =
                build_index(*backbone, list_image_files(images), resolve_created_at(i_created), &err);
            built.save(target);
            out << "index\t" << target << "\t" << built.size() << "\n";
        } else if (search->parsed()) {
            const Loaded l = load_checkpoint(need(s_ckpt, cfg, "paths.checkpoint", "--ckpt"));
            const RetrievalIndex idx = RetrievalIndex::load(need(s_index, cfg, "paths.index", "--index"));
            check_index_backbone(idx, *l.backbone);
            const std::string images = pick(s_images, cfg, "data.images");
            std::optional<std::filesystem::path> dir;
            if (!images.empty()) dir = images;
            const Retriever retriever(*l.backbone, *l.model, idx, dir);
            const SearchResult res = retriever.search(make_query(s_ref, s_ref_image, s_mod, s_top, s_exclude));
            if (!res.warning.empty()) err << "warning\t" << one_line(res.warning) << "\n";
            for (std::size_t i = 0; i < res.hits.size(); ++i) {
                out << (i + 1) << "\t" << res.hits[i].id << "\t" << format_score(res.hits[i].score) << "\n";
            }
        } else if (evaluate_cmd->parsed()) {
            const DatasetFormat format = parse_dataset_format(e_dataset);
            const Loaded l = load_checkpoint(need(e_ckpt, cfg, "paths.checkpoint", "--ckpt"));
            const RetrievalIndex idx = RetrievalIndex::load(need(e_index, cfg, "paths.index", "--index"));
            check_index_backbone(idx, *l.backbone);
            const Retriever retriever(*l.backbone, *l.model, idx,
                                      std::filesystem::path(need(e_images, cfg, "data.images", "--images")));
            EvalOptions opts;
            opts.load.split = e_split;
            opts.load.fashioniq_joiner = e_joiner;
            if (!e_categories.empty()) opts.load.fashioniq_categories = e_categories;
            opts.exclude_reference = !e_keep_ref;
            const Dataset ds = load_dataset(need(e_data, cfg, "eval.data", "--data"), format, opts.load);
            const std::string report = evaluate(ds, format, retriever, opts).to_tsv();
            if (!e_out.empty()) write_file_atomic(e_out, std::span(reinterpret_cast<const std::uint8_t*>(report.data()),
                                                                   report.size()));
            out << report;
        } else if (describe_cmd->parsed()) {
            const Loaded l = load_checkpoint(need(d_ckpt, cfg, "paths.checkpoint", "--ckpt"));
            const CaptionFile file = CaptionFile::load(need(d_captions, cfg, "data.captions", "--captions"));
            const auto tagger = make_tagger(pick(d_tagger, cfg, "text.tagger_table"));
            require(d_ref.empty() != d_ref_image.empty(), ErrorKind::input,
                    "exactly one of --ref or --ref-image is required");
            Image img;
            if (!d_ref_image.empty()) {
                img = load_image(d_ref_image);
            } else {
                const std::string images = need(d_images, cfg, "data.images", "--images");
                std::optional<std::filesystem::path> found;
                for (const ImageFile& f : list_image_files(images)) {
                    if (f.id == d_ref) found = f.path;
                }
                if (!found) fail(ErrorKind::input, "unknown reference id " + d_ref);
                img = load_image(*found);
            }
            std::vector<std::string> captions;
            for (const std::string& id : file.ids()) captions.push_back(file.caption(id));
            const DescriptionCorpus corpus = DescriptionCorpus::build(*l.backbone, captions, *tagger);
            const DescribeResult res =
                describe(*l.backbone, *l.model, l.backbone->encode_image(img), corpus, d_top);
            for (std::size_t i = 0; i < res.subjects.size(); ++i) {
                out << "subject\t" << (i + 1) << "\t" << res.subjects[i].text << "\t"
                    << format_score(res.subjects[i].score) << "\n";
            }
            for (std::size_t i = 0; i < res.attributes.size(); ++i) {
                out << "attribute\t" << (i + 1) << "\t" << res.attributes[i].text << "\t"
                    << format_score(res.attributes[i].score) << "\n";
            }
        } else if (serve->parsed()) {
            ServiceConfig sc = ServiceConfig::from_config(cfg);
            if (!v_ckpt.empty()) sc.checkpoint = v_ckpt;
            if (!v_index.empty()) sc.index = v_index;
            if (!v_images.empty()) sc.image_dir = v_images;
            if (!v_host.empty()) sc.host = v_host;
            if (v_port) sc.port = *v_port;
            Service service(sc);
            service.initialize();
            g_service = &service;
            std::signal(SIGINT, handle_stop);
            std::signal(SIGTERM, handle_stop);
            service.listen([&](int port) {
                out << "listening\t" << sc.host << ":" << port << "\n" << std::flush;
            });
            g_service = nullptr;
        }
    } catch (const Error& e) {
        err << "error\t" << to_string(e.kind()) << "\t" << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error\tinternal\t" << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace fticir::cli
