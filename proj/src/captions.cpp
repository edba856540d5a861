#include <fstream>
#include <sstream>

#include "fticir/backbone.hpp"
#include "fticir/errors.hpp"

namespace fticir {

CaptionFile CaptionFile::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open caption file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

CaptionFile CaptionFile::parse(std::string_view text, std::string_view source) {
    CaptionFile file;
    std::size_t line_no = 0;
    while (!text.empty()) {
        std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0 || tab + 1 >= line.size()) {
            fail(ErrorKind::parse, std::string(source) + ":" + std::to_string(line_no) +
                                       ": expected id<TAB>caption with both fields non-empty");
        }
        file.add(std::string(line.substr(0, tab)), std::string(line.substr(tab + 1)));
    }
    return file;
}

std::string CaptionFile::caption(const std::string& image_id) const {
    auto it = captions_.find(image_id);
    if (it == captions_.end()) {
        fail(ErrorKind::lookup, "no caption for image id " + image_id);
    }
    return it->second;
}

std::vector<std::string> CaptionFile::ids() const {
    std::vector<std::string> out;
    out.reserve(captions_.size());
    for (const auto& [id, c] : captions_) out.push_back(id);
    return out;
}

void CaptionFile::add(std::string id, std::string caption) {
    require(!caption.empty(), ErrorKind::parse, "empty caption for " + id);
    captions_[std::move(id)] = std::move(caption);
}

std::string CaptionFile::serialize() const {
    std::string out;
    for (const auto& [id, c] : captions_) {
        out += id;
        out += '\t';
        out += c;
        out += '\n';
    }
    return out;
}

}  // namespace fticir
