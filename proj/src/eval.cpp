#include "fticir/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fticir/errors.hpp"

namespace fticir {

namespace {

using nlohmann::json;

void check_k(int k) { require(k >= 1, ErrorKind::config, "K must be >= 1 (got " + std::to_string(k) + ")"); }

void check_lengths(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets) {
    require(rankings.size() == triplets.size(), ErrorKind::input, "one ranking per triplet is required");
    require(!triplets.empty(), ErrorKind::input, "metrics need at least one query");
}

bool hit_in_top(const Ranking& ranking, const std::vector<std::string>& targets, std::size_t k) {
    const std::size_t n = std::min(k, ranking.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (std::find(targets.begin(), targets.end(), ranking[i]) != targets.end()) return true;
    }
    return false;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

std::string field_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) fail(ErrorKind::parse, where + ": missing field " + key);
    const json& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    fail(ErrorKind::parse, where + ": field " + key + " must be a string");
}

std::vector<std::string> field_list(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) fail(ErrorKind::parse, where + ": missing field " + key);
    const json& v = j.at(key);
    if (!v.is_array()) fail(ErrorKind::parse, where + ": field " + key + " must be a list");
    std::vector<std::string> out;
    for (const json& e : v) {
        if (e.is_string()) {
            out.push_back(e.get<std::string>());
        } else if (e.is_number_integer()) {
            out.push_back(std::to_string(e.get<long long>()));
        } else {
            fail(ErrorKind::parse, where + ": field " + key + " must hold strings");
        }
    }
    return out;
}

std::string coco_id(const json& v, const std::string& where, const char* key) {
    if (v.is_number_integer()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%012lld", v.get<long long>());
        return buf;
    }
    if (v.is_string()) return v.get<std::string>();
    fail(ErrorKind::parse, where + ": field " + key + " must be an image id");
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

Dataset load_fashioniq(const std::filesystem::path& root, const LoadOptions& opt) {
    Dataset ds;
    ds.name = "fashioniq";
    for (const std::string& cat : opt.fashioniq_categories) {
        const std::filesystem::path cap = root / "captions" / ("cap." + cat + "." + opt.split + ".json");
        const json records = read_json(cap);
        if (!records.is_array()) fail(ErrorKind::parse, cap.string() + ": expected a list of records");
        for (std::size_t i = 0; i < records.size(); ++i) {
            const std::string where = cap.string() + ": record " + std::to_string(i);
            const json& r = records[i];
            const std::vector<std::string> caps = field_list(r, "captions", where);
            require(!caps.empty(), ErrorKind::parse, where + ": captions list is empty");
            EvalTriplet t;
            t.reference = field_string(r, "candidate", where);
            t.targets = {field_string(r, "target", where)};
            for (std::size_t c = 0; c < caps.size(); ++c) {
                if (c > 0) t.modification += opt.fashioniq_joiner;
                t.modification += caps[c];
            }
            t.group = cat;
            t.validate();
            ds.triplets.push_back(std::move(t));
        }
        const std::filesystem::path split = root / "image_splits" / ("split." + cat + "." + opt.split + ".json");
        if (std::filesystem::exists(split)) {
            ds.pools[cat] = field_list(json{{"ids", read_json(split)}}, "ids", split.string());
        }
    }
    return ds;
}

Dataset load_cirr(const std::filesystem::path& root, const LoadOptions& opt) {
    Dataset ds;
    ds.name = "cirr";
    const std::filesystem::path cap = root / "captions" / ("cap.rc2." + opt.split + ".json");
    const json records = read_json(cap);
    if (!records.is_array()) fail(ErrorKind::parse, cap.string() + ": expected a list of records");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string where = cap.string() + ": record " + std::to_string(i);
        const json& r = records[i];
        EvalTriplet t;
        t.reference = field_string(r, "reference", where);
        t.modification = field_string(r, "caption", where);
        if (!r.contains("target_hard")) {
            fail(ErrorKind::data, where + ": no target_hard (labels of this split are withheld)");
        }
        t.targets = {field_string(r, "target_hard", where)};
        if (r.contains("img_set")) {
            std::vector<std::string> members = field_list(r.at("img_set"), "members", where + " img_set");
            members.erase(std::remove(members.begin(), members.end(), t.reference), members.end());
            t.subset = std::move(members);
        }
        t.validate();
        ds.triplets.push_back(std::move(t));
    }
    const std::filesystem::path split = root / "image_splits" / ("split.rc2." + opt.split + ".json");
    if (std::filesystem::exists(split)) {
        const json names = read_json(split);
        std::vector<std::string> pool;
        if (names.is_object()) {
            for (auto it = names.begin(); it != names.end(); ++it) pool.push_back(it.key());
        } else {
            pool = field_list(json{{"ids", names}}, "ids", split.string());
        }
        ds.pools[""] = std::move(pool);
    }
    return ds;
}

Dataset load_circo(const std::filesystem::path& root, const LoadOptions& opt) {
    Dataset ds;
    ds.name = "circo";
    const std::filesystem::path ann = root / "annotations" / (opt.split + ".json");
    const json records = read_json(ann);
    if (!records.is_array()) fail(ErrorKind::parse, ann.string() + ": expected a list of records");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::string where = ann.string() + ": record " + std::to_string(i);
        const json& r = records[i];
        if (!r.contains("reference_img_id")) fail(ErrorKind::parse, where + ": missing field reference_img_id");
        EvalTriplet t;
        t.reference = coco_id(r.at("reference_img_id"), where, "reference_img_id");
        t.modification = field_string(r, "relative_caption", where);
        if (r.contains("gt_img_ids")) {
            for (const json& g : r.at("gt_img_ids")) t.targets.push_back(coco_id(g, where, "gt_img_ids"));
        } else if (r.contains("target_img_id")) {
            t.targets.push_back(coco_id(r.at("target_img_id"), where, "target_img_id"));
        } else {
            fail(ErrorKind::data, where + ": no ground-truth ids (labels of this split are withheld)");
        }
        t.validate();
        ds.triplets.push_back(std::move(t));
    }
    return ds;
}

}  // namespace

void EvalTriplet::validate() const {
    require(!reference.empty(), ErrorKind::data, "triplet has an empty reference");
    require(!modification.empty(), ErrorKind::data, "triplet for " + reference + " has an empty modification");
    require(!targets.empty(), ErrorKind::data, "triplet for " + reference + " has no target");
    require(std::find(targets.begin(), targets.end(), reference) == targets.end(), ErrorKind::data,
            "triplet reference " + reference + " is also listed as a target");
}

double recall_at_k(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets, int k) {
    check_k(k);
    check_lengths(rankings, triplets);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < triplets.size(); ++q) {
        if (hit_in_top(rankings[q], triplets[q].targets, static_cast<std::size_t>(k))) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(triplets.size());
}

double subset_recall_at_k(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets, int k) {
    check_k(k);
    check_lengths(rankings, triplets);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < triplets.size(); ++q) {
        const EvalTriplet& t = triplets[q];
        if (!t.subset) fail(ErrorKind::data, "triplet for " + t.reference + " has no subset");
        const std::set<std::string> members(t.subset->begin(), t.subset->end());
        Ranking filtered;
        for (const std::string& id : rankings[q]) {
            if (members.count(id) != 0) filtered.push_back(id);
        }
        if (hit_in_top(filtered, t.targets, static_cast<std::size_t>(k))) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(triplets.size());
}

double average_precision_at_k(const Ranking& ranking, const std::vector<std::string>& targets, int k) {
    check_k(k);
    require(!targets.empty(), ErrorKind::data, "average precision needs at least one target");
    const std::set<std::string> wanted(targets.begin(), targets.end());
    const std::size_t n = std::min(static_cast<std::size_t>(k), ranking.size());
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n; ++p) {
        if (wanted.count(ranking[p]) != 0) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(p + 1);
        }
    }
    const double denom = static_cast<double>(std::min(static_cast<std::size_t>(k), wanted.size()));
    return sum / denom;
}

double map_at_k(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets, int k) {
    check_k(k);
    check_lengths(rankings, triplets);
    double sum = 0.0;
    for (std::size_t q = 0; q < triplets.size(); ++q) sum += average_precision_at_k(rankings[q], triplets[q].targets, k);
    return sum / static_cast<double>(triplets.size());
}

std::optional<double> MetricReport::get(const std::string& name) const {
    for (const auto& [n, v] : metrics) {
        if (n == name) return v;
    }
    return std::nullopt;
}

void MetricReport::add(std::string name, double value) {
    require(value >= 0.0 && value <= 1.0, ErrorKind::data, "metric " + name + " outside [0, 1]");
    metrics.emplace_back(std::move(name), value);
}

std::string MetricReport::to_tsv() const {
    std::string out = "dataset\t" + dataset + "\nqueries\t" + std::to_string(queries) + "\n";
    for (const auto& [name, value] : metrics) out += name + "\t" + fmt6(value) + "\n";
    for (const auto& [key, value] : notes) out += "note\t" + key + "\t" + value + "\n";
    return out;
}

DatasetFormat parse_dataset_format(const std::string& name) {
    if (name == "canonical" || name == "jsonl") return DatasetFormat::canonical;
    if (name == "fashioniq") return DatasetFormat::fashioniq;
    if (name == "cirr") return DatasetFormat::cirr;
    if (name == "circo") return DatasetFormat::circo;
    fail(ErrorKind::config, "unknown dataset format " + name + " (expected canonical, fashioniq, cirr or circo)");
}

std::string to_string(DatasetFormat format) {
    switch (format) {
        case DatasetFormat::canonical: return "canonical";
        case DatasetFormat::fashioniq: return "fashioniq";
        case DatasetFormat::cirr: return "cirr";
        case DatasetFormat::circo: return "circo";
    }
    return "canonical";
}

std::vector<EvalTriplet> parse_canonical(std::string_view text, const std::string& source) {
    std::vector<EvalTriplet> out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::parse, where + ": " + e.what());
        }
        if (!j.is_object()) fail(ErrorKind::parse, where + ": expected an object");
        EvalTriplet t;
        t.reference = field_string(j, "reference", where);
        t.modification = field_string(j, "modification", where);
        t.targets = field_list(j, "targets", where);
        if (j.contains("subset")) t.subset = field_list(j, "subset", where);
        if (j.contains("group")) t.group = field_string(j, "group", where);
        try {
            t.validate();
        } catch (const Error& e) {
            fail(e.kind(), where + ": " + e.what());
        }
        out.push_back(std::move(t));
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options) {
    switch (format) {
        case DatasetFormat::canonical: {
            Dataset ds;
            ds.name = path.stem().string();
            ds.triplets = parse_canonical(read_text(path), path.string());
            return ds;
        }
        case DatasetFormat::fashioniq: return load_fashioniq(path, options);
        case DatasetFormat::cirr: return load_cirr(path, options);
        case DatasetFormat::circo: return load_circo(path, options);
    }
    fail(ErrorKind::config, "unknown dataset format");
}

MetricReport metric_suite(const std::string& dataset, DatasetFormat format, const std::vector<Ranking>& rankings,
                          const std::vector<EvalTriplet>& triplets) {
    MetricReport report;
    report.dataset = dataset;
    report.queries = triplets.size();
    const bool all_subsets =
        std::all_of(triplets.begin(), triplets.end(), [](const EvalTriplet& t) { return t.subset.has_value(); });
    switch (format) {
        case DatasetFormat::fashioniq: {
            std::vector<std::string> groups;
            for (const EvalTriplet& t : triplets) {
                if (std::find(groups.begin(), groups.end(), t.group) == groups.end()) groups.push_back(t.group);
            }
            double sum10 = 0.0;
            double sum50 = 0.0;
            for (const std::string& g : groups) {
                std::vector<Ranking> rs;
                std::vector<EvalTriplet> ts;
                for (std::size_t i = 0; i < triplets.size(); ++i) {
                    if (triplets[i].group == g) {
                        rs.push_back(rankings[i]);
                        ts.push_back(triplets[i]);
                    }
                }
                const double r10 = recall_at_k(rs, ts, 10);
                const double r50 = recall_at_k(rs, ts, 50);
                report.add(g + "/R@10", r10);
                report.add(g + "/R@50", r50);
                sum10 += r10;
                sum50 += r50;
            }
            report.add("Avg/R@10", sum10 / static_cast<double>(groups.size()));
            report.add("Avg/R@50", sum50 / static_cast<double>(groups.size()));
            break;
        }
        case DatasetFormat::cirr: {
            for (int k : {1, 5, 10, 50}) report.add("R@" + std::to_string(k), recall_at_k(rankings, triplets, k));
            if (all_subsets) {
                for (int k : {1, 2, 3}) {
                    report.add("R_subset@" + std::to_string(k), subset_recall_at_k(rankings, triplets, k));
                }
                report.add("Avg", (*report.get("R@5") + *report.get("R_subset@1")) / 2.0);
            }
            break;
        }
        case DatasetFormat::circo: {
            for (int k : {5, 10, 25, 50}) report.add("mAP@" + std::to_string(k), map_at_k(rankings, triplets, k));
            break;
        }
        case DatasetFormat::canonical: {
            for (int k : {1, 5, 10, 50}) report.add("R@" + std::to_string(k), recall_at_k(rankings, triplets, k));
            if (all_subsets) {
                for (int k : {1, 2, 3}) {
                    report.add("R_subset@" + std::to_string(k), subset_recall_at_k(rankings, triplets, k));
                }
                report.add("Avg", (*report.get("R@5") + *report.get("R_subset@1")) / 2.0);
            }
            for (int k : {5, 10, 25, 50}) report.add("mAP@" + std::to_string(k), map_at_k(rankings, triplets, k));
            break;
        }
    }
    return report;
}

MetricReport evaluate(const Dataset& dataset, DatasetFormat format, const Retriever& retriever,
                      const EvalOptions& options) {
    require(!dataset.triplets.empty(), ErrorKind::data, "dataset " + dataset.name + " has no triplets");
    const RetrievalIndex& index = retriever.index();
    std::set<std::string> indexed(index.ids.begin(), index.ids.end());
    std::set<std::string> missing;
    for (const EvalTriplet& t : dataset.triplets) {
        if (indexed.count(t.reference) == 0) missing.insert(t.reference);
        for (const std::string& id : t.targets) {
            if (indexed.count(id) == 0) missing.insert(id);
        }
        if (t.subset) {
            for (const std::string& id : *t.subset) {
                if (indexed.count(id) == 0) missing.insert(id);
            }
        }
    }
    if (!missing.empty()) {
        std::string list;
        std::size_t shown = 0;
        for (const std::string& id : missing) {
            if (shown++ == 10) {
                list += ", ...";
                break;
            }
            list += (list.empty() ? "" : ", ") + id;
        }
        fail(ErrorKind::data, std::to_string(missing.size()) + " ids missing from the index: " + list);
    }

    std::map<std::string, std::set<std::string>> pools;
    for (const auto& [group, ids] : dataset.pools) pools[group] = std::set<std::string>(ids.begin(), ids.end());

    std::vector<Ranking> rankings;
    rankings.reserve(dataset.triplets.size());
    for (const EvalTriplet& t : dataset.triplets) {
        ComposedQuery q;
        q.reference_id = t.reference;
        q.modification = t.modification;
        q.top_k = index.size();
        q.exclude_reference = options.exclude_reference;
        const SearchResult res = retriever.search(q);
        const auto pool = pools.find(t.group);
        Ranking ranking;
        for (const SearchHit& h : res.hits) {
            if (pool == pools.end() || pool->second.count(h.id) != 0) ranking.push_back(h.id);
        }
        rankings.push_back(std::move(ranking));
    }
    MetricReport report = metric_suite(dataset.name, format, rankings, dataset.triplets);
    if (format == DatasetFormat::fashioniq) report.notes.emplace_back("fashioniq_joiner", options.load.fashioniq_joiner);
    report.notes.emplace_back("exclude_reference", options.exclude_reference ? "true" : "false");
    return report;
}

}  // namespace fticir
