#pragma once

// Flat key-value configuration: one `dotted.key = value` per line, `#`
// comments, optional double quotes around values. Later assignments win,
// which is how command-line overrides are layered on top of a file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fticir {

class Config {
public:
    Config() = default;

    static Config parse(std::string_view text, std::string_view source = "<string>");
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, std::string value);
    // "key=value"
    void apply_override(std::string_view assignment);
    void merge(const Config& other);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated; empty entries dropped.
    std::vector<std::string> get_list(const std::string& key) const;

    std::string require_string(const std::string& key) const;

    // Sorted `key = value` lines; parse(serialize()) round-trips.
    std::string serialize() const;
    // FNV-1a over serialize().
    std::uint64_t hash() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

std::string hex64(std::uint64_t value);
std::uint64_t fnv1a64(std::string_view data);

}  // namespace fticir
