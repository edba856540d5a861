#pragma once

// Procedural image corpus: coloured shapes on plain backgrounds with
// lexicon captions such as "two red circles on a blue background.".

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fticir/image.hpp"

namespace fticir {

struct ToyScene {
    std::string id;
    int count = 1;         // 1..4
    std::string shape;     // singular noun
    std::string colour;
    std::string background;
    std::string size;      // "small" / "large"
};

struct ToyCorpusConfig {
    int count = 200;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 7;
};

struct ToyTriplet {
    std::string reference;
    std::string modification;
    std::string target;
};

struct ToyCorpus {
    std::vector<ToyScene> scenes;
    std::vector<Image> images;

    static ToyCorpus generate(const ToyCorpusConfig& cfg);

    std::vector<std::string> ids() const;
    // Writes images/<id>.ppm, captions.tsv and triplets.jsonl into `dir`.
    void write(const std::filesystem::path& dir) const;
    // Pairs that differ in exactly one of colour / background / count.
    std::vector<ToyTriplet> triplets(std::size_t max_count) const;
};

std::string toy_caption(const ToyScene& scene);
Image render_scene(const ToyScene& scene, int width, int height, std::uint64_t seed);

}  // namespace fticir
