#include "fticir/toydata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fticir/errors.hpp"
#include "fticir/rng.hpp"

namespace fticir {

namespace {

struct Colour {
    const char* name;
    std::uint8_t r, g, b;
};

constexpr Colour kColours[] = {
    {"red", 220, 30, 30},     {"green", 30, 180, 60},   {"blue", 40, 70, 220},   {"yellow", 235, 220, 40},
    {"purple", 140, 50, 170}, {"orange", 245, 140, 20}, {"white", 245, 245, 245}, {"black", 20, 20, 20},
};

constexpr const char* kShapes[] = {"circle", "square", "triangle", "cross", "diamond", "star"};
constexpr const char* kCountWords[] = {"a", "two", "three", "four"};
constexpr const char* kSizes[] = {"small", "large"};

const Colour& colour(const std::string& name) {
    for (const Colour& c : kColours) {
        if (name == c.name) return c;
    }
    fail(ErrorKind::input, "unknown toy colour " + name);
}

std::string plural(const std::string& noun) {
    if (noun == "cross") return "crosses";
    return noun + "s";
}

bool inside(const std::string& shape, double dx, double dy, double radius) {
    const double ax = std::abs(dx);
    const double ay = std::abs(dy);
    if (shape == "circle") return dx * dx + dy * dy <= radius * radius;
    if (shape == "square") return ax <= radius * 0.85 && ay <= radius * 0.85;
    if (shape == "diamond") return ax + ay <= radius;
    if (shape == "cross") return (ax <= radius * 0.3 && ay <= radius) || (ay <= radius * 0.3 && ax <= radius);
    if (shape == "triangle") {
        // apex up, base at dy = +radius
        if (dy < -radius || dy > radius * 0.8) return false;
        const double half = (dy + radius) / 1.8 * 0.9;
        return ax <= half;
    }
    if (shape == "star") {
        const double angle = std::atan2(dy, dx);
        const double rr = radius * (0.55 + 0.45 * std::abs(std::cos(2.5 * angle)));
        return dx * dx + dy * dy <= rr * rr;
    }
    fail(ErrorKind::input, "unknown toy shape " + shape);
}

std::string article(const std::string& word) {
    return std::string("aeiou").find(word.front()) != std::string::npos ? "an " : "a ";
}

}  // namespace

std::string toy_caption(const ToyScene& s) {
    const std::string noun = s.count == 1 ? s.shape : plural(s.shape);
    return std::string(kCountWords[s.count - 1]) + " " + s.size + " " + s.colour + " " + noun + " on " +
           article(s.background) + s.background + " background.";
}

Image render_scene(const ToyScene& s, int width, int height, std::uint64_t seed) {
    require(s.count >= 1 && s.count <= 4, ErrorKind::input, "toy scenes hold 1 to 4 shapes");
    const Colour& bg = colour(s.background);
    const Colour& fg = colour(s.colour);
    Image img = Image::filled(width, height, bg.r, bg.g, bg.b);
    Rng rng(seed);
    std::vector<int> cells{0, 1, 2, 3};
    rng.shuffle(cells);
    const double cell_w = width / 2.0;
    const double cell_h = height / 2.0;
    const double base = std::min(cell_w, cell_h) / 2.0;
    const double radius = s.size == "large" ? base * 0.85 : base * 0.5;
    for (int k = 0; k < s.count; ++k) {
        const int cell = cells[static_cast<std::size_t>(k)];
        const double slack_x = cell_w / 2.0 - radius;
        const double slack_y = cell_h / 2.0 - radius;
        const double cx = (cell % 2 + 0.5) * cell_w + rng.uniform(-slack_x, slack_x) * 0.8;
        const double cy = (cell / 2 + 0.5) * cell_h + rng.uniform(-slack_y, slack_y) * 0.8;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                if (inside(s.shape, x + 0.5 - cx, y + 0.5 - cy, radius)) {
                    img.at(x, y, 0) = fg.r;
                    img.at(x, y, 1) = fg.g;
                    img.at(x, y, 2) = fg.b;
                }
            }
        }
    }
    for (std::uint8_t& v : img.rgb) {
        const int noisy = static_cast<int>(v) + static_cast<int>(rng.below(17)) - 8;
        v = static_cast<std::uint8_t>(std::clamp(noisy, 0, 255));
    }
    return img;
}

ToyCorpus ToyCorpus::generate(const ToyCorpusConfig& cfg) {
    require(cfg.count >= 1, ErrorKind::config, "toy corpus needs at least one image");
    require(cfg.width >= 16 && cfg.height >= 16, ErrorKind::config, "toy images must be at least 16x16");
    Rng rng(cfg.seed);
    ToyCorpus corpus;
    const std::size_t n_colours = std::size(kColours);
    for (int i = 0; i < cfg.count; ++i) {
        ToyScene s;
        char id[32];
        std::snprintf(id, sizeof(id), "img_%03d", i);
        s.id = id;
        s.count = 1 + static_cast<int>(rng.below(4));
        s.shape = kShapes[rng.below(std::size(kShapes))];
        s.size = kSizes[rng.below(2)];
        const std::size_t fg = rng.below(n_colours);
        std::size_t bg = rng.below(n_colours - 1);
        if (bg >= fg) ++bg;
        s.colour = kColours[fg].name;
        s.background = kColours[bg].name;
        corpus.images.push_back(render_scene(s, cfg.width, cfg.height, rng.next()));
        corpus.scenes.push_back(std::move(s));
    }
    return corpus;
}

std::vector<std::string> ToyCorpus::ids() const {
    std::vector<std::string> out;
    for (const ToyScene& s : scenes) out.push_back(s.id);
    return out;
}

std::vector<ToyTriplet> ToyCorpus::triplets(std::size_t max_count) const {
    std::vector<ToyTriplet> out;
    for (const ToyScene& ref : scenes) {
        for (const ToyScene& tgt : scenes) {
            if (out.size() >= max_count) return out;
            if (&ref == &tgt || ref.shape != tgt.shape || ref.size != tgt.size) continue;
            const bool same_colour = ref.colour == tgt.colour;
            const bool same_bg = ref.background == tgt.background;
            const bool same_count = ref.count == tgt.count;
            const int diffs = !same_colour + !same_bg + !same_count;
            if (diffs != 1) continue;
            ToyTriplet t{ref.id, "", tgt.id};
            if (!same_colour) t.modification = "make the shapes " + tgt.colour;
            if (!same_bg) t.modification = "has " + article(tgt.background) + tgt.background + " background";
            if (!same_count) {
                t.modification = std::string("show ") + (tgt.count == 1 ? "one" : kCountWords[tgt.count - 1]) + " of them";
            }
            out.push_back(std::move(t));
        }
    }
    return out;
}

void ToyCorpus::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir / "images");
    std::string captions;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        save_ppm(dir / "images" / (scenes[i].id + ".ppm"), images[i]);
        captions += scenes[i].id + "\t" + toy_caption(scenes[i]) + "\n";
    }
    write_file_atomic(dir / "captions.tsv",
                      std::span(reinterpret_cast<const std::uint8_t*>(captions.data()), captions.size()));
    std::string lines;
    for (const ToyTriplet& t : triplets(static_cast<std::size_t>(-1))) {
        nlohmann::json j{{"reference", t.reference}, {"modification", t.modification}, {"targets", {t.target}}};
        lines += j.dump() + "\n";
    }
    write_file_atomic(dir / "triplets.jsonl", std::span(reinterpret_cast<const std::uint8_t*>(lines.data()), lines.size()));
}

}  // namespace fticir
