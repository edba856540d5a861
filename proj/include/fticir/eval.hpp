#pragma once

// Benchmark triplets, dataset adapters and the retrieval metric families.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fticir/config.hpp"
#include "fticir/retrieval.hpp"

namespace fticir {

struct EvalTriplet {
    std::string reference;
    std::string modification;
    std::vector<std::string> targets;
    std::optional<std::vector<std::string>> subset;
    std::string group;  // FashionIQ category; empty elsewhere

    void validate() const;
};

using Ranking = std::vector<std::string>;

// Fraction of queries with any target in the first K entries.
double recall_at_k(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets, int k);
// R@K after keeping only subset members, in their original order.
double subset_recall_at_k(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets, int k);
// Mean of AP@K = sum over hits at p <= K of precision@p, over min(K, |targets|).
double map_at_k(const std::vector<Ranking>& rankings, const std::vector<EvalTriplet>& triplets, int k);

double average_precision_at_k(const Ranking& ranking, const std::vector<std::string>& targets, int k);

struct MetricReport {
    std::string dataset;
    std::size_t queries = 0;
    std::vector<std::pair<std::string, double>> metrics;  // insertion order
    std::vector<std::pair<std::string, std::string>> notes;

    std::optional<double> get(const std::string& name) const;
    void add(std::string name, double value);
    // `metric<TAB>value` lines, values with 6 decimals, preceded by
    // `dataset` / `queries` lines and followed by `note` lines.
    std::string to_tsv() const;
};

enum class DatasetFormat { canonical, fashioniq, cirr, circo };

DatasetFormat parse_dataset_format(const std::string& name);
std::string to_string(DatasetFormat format);

struct Dataset {
    std::string name;
    std::vector<EvalTriplet> triplets;
    // Candidate pool ids; FashionIQ keeps one pool per category.
    std::map<std::string, std::vector<std::string>> pools;
};

struct LoadOptions {
    std::string split = "test";
    std::string fashioniq_joiner = " and ";
    std::vector<std::string> fashioniq_categories{"dress", "shirt", "toptee"};
};

// canonical: JSON-lines file with `reference`, `modification`, `targets`,
// optional `subset`. Native layouts:
//   fashioniq: <root>/captions/cap.<category>.<split>.json, <root>/image_splits/split.<category>.<split>.json
//   cirr:      <root>/captions/cap.rc2.<split>.json, <root>/image_splits/split.rc2.<split>.json
//   circo:     <root>/annotations/<split>.json (pool: every index id)
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, const LoadOptions& options = {});
std::vector<EvalTriplet> parse_canonical(std::string_view text, const std::string& source);

struct EvalOptions {
    LoadOptions load;
    bool exclude_reference = true;
};

// Ranks the reference's pool for every triplet and computes the dataset's
// metric suite. Every referenced id must be in the index.
MetricReport evaluate(const Dataset& dataset, DatasetFormat format, const Retriever& retriever,
                      const EvalOptions& options = {});

// Metric suites from precomputed rankings (used by evaluate()).
MetricReport metric_suite(const std::string& dataset, DatasetFormat format, const std::vector<Ranking>& rankings,
                          const std::vector<EvalTriplet>& triplets);

}  // namespace fticir
