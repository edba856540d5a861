// Writes the procedural toy corpus: images/, captions.tsv, triplets.jsonl.

#include <iostream>

#include <CLI11.hpp>

#include "fticir/errors.hpp"
#include "fticir/toydata.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate the toy corpus", "fticir_toydata"};
    std::string out;
    fticir::ToyCorpusConfig cfg;
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--count", cfg.count, "Number of images")->check(CLI::PositiveNumber);
    app.add_option("--size", cfg.width, "Image width and height")->check(CLI::Range(16, 1024));
    app.add_option("--seed", cfg.seed, "Generator seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error\tusage\t" << e.what() << "\n" << app.help();
        return 2;
    }
    cfg.height = cfg.width;
    try {
        const fticir::ToyCorpus corpus = fticir::ToyCorpus::generate(cfg);
        corpus.write(out);
        std::cout << "images\t" << corpus.scenes.size() << "\n";
    } catch (const fticir::Error& e) {
        std::cerr << "error\t" << fticir::to_string(e.kind()) << "\t" << e.what() << "\n";
        return 1;
    }
    return 0;
}
