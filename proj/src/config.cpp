#include "fticir/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fticir/errors.hpp"

namespace fticir {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::string unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        return std::string(s.substr(1, s.size() - 2));
    }
    return std::string(s);
}

bool needs_quotes(const std::string& v) {
    return v.empty() || v.front() == ' ' || v.back() == ' ' || v.find('#') != std::string::npos;
}

}  // namespace

Config Config::parse(std::string_view text, std::string_view source) {
    Config cfg;
    std::size_t line_no = 0;
    while (!text.empty()) {
        std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        std::string_view body = trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        // Comments only start outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            if (body[i] == '"') quoted = !quoted;
            if (body[i] == '#' && !quoted) {
                body = trim(body.substr(0, i));
                break;
            }
        }
        std::size_t eq = body.find('=');
        if (eq == std::string_view::npos) {
            fail(ErrorKind::parse, std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
        }
        std::string key(trim(body.substr(0, eq)));
        if (key.empty()) {
            fail(ErrorKind::parse, std::string(source) + ":" + std::to_string(line_no) + ": empty key");
        }
        cfg.values_[key] = unquote(trim(body.substr(eq + 1)));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open config file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

void Config::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

void Config::apply_override(std::string_view assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        fail(ErrorKind::config, "override must look like key=value: " + std::string(assignment));
    }
    set(std::string(trim(assignment.substr(0, eq))), unquote(trim(assignment.substr(eq + 1))));
}

void Config::merge(const Config& other) {
    for (const auto& [k, v] : other.values_) {
        values_[k] = v;
    }
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string Config::require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) {
        fail(ErrorKind::config, "missing required config key " + key);
    }
    return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const char* begin = it->second.c_str();
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || errno == ERANGE) {
        fail(ErrorKind::config, "config key " + key + " expects a real, got '" + it->second + "'");
    }
    return v;
}

long long Config::get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const char* begin = it->second.c_str();
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0' || errno == ERANGE) {
        fail(ErrorKind::config, "config key " + key + " expects an integer, got '" + it->second + "'");
    }
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        return fallback;
    }
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::config, "config key " + key + " expects a boolean, got '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = values_.find(key);
    if (it == values_.end()) {
        return out;
    }
    std::string_view rest = it->second;
    while (!rest.empty()) {
        std::size_t comma = rest.find(',');
        std::string_view item = trim(rest.substr(0, comma));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
    }
    return out;
}

std::string Config::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += " = ";
        out += needs_quotes(v) ? "\"" + v + "\"" : v;
        out += '\n';
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t Config::hash() const { return fnv1a64(serialize()); }

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace fticir
