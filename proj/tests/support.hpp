#pragma once

// Helpers shared by the unit and acceptance binaries: scratch directories,
// small configurations, finite differences and brute-force oracles.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fticir/autograd.hpp"
#include "fticir/backbone.hpp"
#include "fticir/config.hpp"

namespace fticir::testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("fticir_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Gradient check dims.
inline Config gradient_config() {
    Config c;
    c.set("backbone.name", "toy");
    c.set("backbone.d_embed", "8");
    c.set("backbone.d_patch", "12");
    c.set("backbone.d_token", "6");
    c.set("backbone.m_patches", "5");
    c.set("backbone.text_layers", "1");
    c.set("backbone.text_heads", "1");
    c.set("model.n_attrs", "6");
    c.set("filter.k", "3");
    c.set("train.batch_size", "4");
    return c;
}

// Small and fast, for training mechanics.
inline Config small_config() {
    Config c;
    c.set("backbone.name", "toy");
    c.set("backbone.d_embed", "16");
    c.set("backbone.d_patch", "24");
    c.set("backbone.d_token", "16");
    c.set("backbone.m_patches", "16");
    c.set("backbone.text_layers", "1");
    c.set("model.n_attrs", "8");
    c.set("model.transformer_layers", "1");
    c.set("filter.k", "4");
    c.set("train.batch_size", "4");
    c.set("train.epochs", "2");
    c.set("train.lr", "1e-3");
    c.set("train.seed", "3");
    return c;
}

// Desk-scale end-to-end run on the 200-image toy corpus.
inline Config toy_run_config() {
    Config c;
    c.set("backbone.name", "toy");
    c.set("train.lr", "3e-3");
    c.set("train.batch_size", "20");
    c.set("train.epochs", "30");
    return c;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(gen);
    }
    return m;
}

struct GradCheck {
    std::string name;
    double rel_error = 0.0;
    std::size_t coords = 0;
};

// Central differences on up to `max_coords` coordinates per leaf (all when 0),
// compared against the analytic gradient. Relative error per leaf is
// ||g_a - g_n|| / max(||g_a||, ||g_n||) over the sampled coordinates. Leaves
// whose gradient is numerically zero (both norms below 1e-7, e.g. key biases
// under softmax) report the absolute difference instead.
inline std::vector<GradCheck> check_gradients(const std::function<ag::Tensor()>& f,
                                              std::vector<std::pair<std::string, ag::Tensor>> leaves,
                                              double h = 1e-5, std::size_t max_coords = 0,
                                              std::uint64_t seed = 1) {
    for (auto& [name, t] : leaves) t.zero_grad();
    ag::backward(f());
    std::vector<Eigen::MatrixXd> analytic;
    for (auto& [name, t] : leaves) analytic.push_back(t.grad());

    std::mt19937_64 gen(seed);
    std::vector<GradCheck> out;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        ag::Tensor& t = leaves[l].second;
        const Eigen::Index total = t.rows() * t.cols();
        std::vector<Eigen::Index> coords(static_cast<std::size_t>(total));
        for (Eigen::Index i = 0; i < total; ++i) coords[static_cast<std::size_t>(i)] = i;
        if (max_coords != 0 && coords.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), gen);
            coords.resize(max_coords);
        }
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (Eigen::Index c : coords) {
            const Eigen::Index r = c / t.cols();
            const Eigen::Index k = c % t.cols();
            const double keep = t.value()(r, k);
            double fp = 0.0, fm = 0.0;
            {
                const ag::NoGradGuard guard;
                t.mutable_value()(r, k) = keep + h;
                fp = f().item();
                t.mutable_value()(r, k) = keep - h;
                fm = f().item();
            }
            t.mutable_value()(r, k) = keep;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = analytic[l](r, k);
            diff2 += (num - ana) * (num - ana);
            a2 += ana * ana;
            n2 += num * num;
        }
        const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
        const double denom = scale < 1e-7 ? 1.0 : scale;
        out.push_back({leaves[l].first, std::sqrt(diff2) / denom, coords.size()});
    }
    return out;
}

inline double worst(const std::vector<GradCheck>& checks) {
    double w = 0.0;
    for (const GradCheck& c : checks) w = std::max(w, c.rel_error);
    return w;
}

namespace oracle {

inline double cos(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        dot += a(i) * b(i);
        na += a(i) * a(i);
        nb += b(i) * b(i);
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct Filter {
    std::vector<double> sims;
    std::vector<std::size_t> topk;
    std::vector<std::size_t> retained;
    bool fallback = false;
};

// Sort everything, cut to k, then threshold; fall back to the best row.
inline Filter filter(const Eigen::MatrixXd& local, const Eigen::RowVectorXd& global, int k, double eps) {
    Filter f;
    const std::size_t n = static_cast<std::size_t>(local.rows());
    for (std::size_t i = 0; i < n; ++i) f.sims.push_back(cos(local.row(static_cast<Eigen::Index>(i)), global));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    // insertion sort: descending similarity, ascending index among equals
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = i; j > 0; --j) {
            const std::size_t a = order[j - 1], b = order[j];
            const bool swap = f.sims[b] > f.sims[a] || (f.sims[b] == f.sims[a] && b < a);
            if (!swap) break;
            std::swap(order[j - 1], order[j]);
        }
    }
    f.topk.assign(order.begin(), order.begin() + k);
    for (std::size_t i : f.topk) {
        if (f.sims[i] >= eps) f.retained.push_back(i);
    }
    if (f.retained.empty()) {
        f.fallback = true;
        f.retained.push_back(f.topk.front());
    }
    return f;
}

// Symmetric contrastive loss evaluated term by term.
inline double contrastive(const Eigen::MatrixXd& V, const Eigen::MatrixXd& T, double tau, bool intra = true) {
    const Eigen::Index B = V.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < B; ++i) {
        const double num = std::exp(cos(V.row(i), T.row(i)) / tau);
        double den1 = 0.0, den2 = 0.0;
        for (Eigen::Index j = 0; j < B; ++j) {
            den1 += std::exp(cos(V.row(i), T.row(j)) / tau);
            den2 += std::exp(cos(T.row(i), V.row(j)) / tau);
            if (intra && j != i) {
                den1 += std::exp(cos(T.row(i), T.row(j)) / tau);
                den2 += std::exp(cos(V.row(i), V.row(j)) / tau);
            }
        }
        total += -std::log(num / den1) - std::log(num / den2);
    }
    return total / static_cast<double>(B);
}

inline double ortho(const Eigen::MatrixXd& W) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        for (Eigen::Index j = 0; j < W.rows(); ++j) {
            double dot = 0.0;
            for (Eigen::Index c = 0; c < W.cols(); ++c) dot += W(i, c) * W(j, c);
            const double d = dot - (i == j ? 1.0 : 0.0);
            s += d * d;
        }
    }
    return s;
}

inline bool contains(const std::vector<std::string>& v, const std::string& x) {
    for (const std::string& e : v) {
        if (e == x) return true;
    }
    return false;
}

inline double recall(const std::vector<std::vector<std::string>>& rankings,
                     const std::vector<std::vector<std::string>>& targets, int k) {
    double hits = 0.0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        bool hit = false;
        for (int p = 0; p < k && p < static_cast<int>(rankings[q].size()); ++p) {
            if (contains(targets[q], rankings[q][static_cast<std::size_t>(p)])) hit = true;
        }
        hits += hit ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(rankings.size());
}

inline double subset_recall(const std::vector<std::vector<std::string>>& rankings,
                            const std::vector<std::vector<std::string>>& targets,
                            const std::vector<std::vector<std::string>>& subsets, int k) {
    std::vector<std::vector<std::string>> filtered(rankings.size());
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        for (const std::string& id : rankings[q]) {
            if (contains(subsets[q], id)) filtered[q].push_back(id);
        }
    }
    return recall(filtered, targets, k);
}

inline double average_precision(const std::vector<std::string>& ranking, const std::vector<std::string>& targets,
                                int k) {
    const std::set<std::string> distinct(targets.begin(), targets.end());
    double sum = 0.0;
    for (int p = 1; p <= k && p <= static_cast<int>(ranking.size()); ++p) {
        if (!distinct.count(ranking[static_cast<std::size_t>(p - 1)])) continue;
        int hits = 0;
        for (int q = 1; q <= p; ++q) hits += distinct.count(ranking[static_cast<std::size_t>(q - 1)]) ? 1 : 0;
        sum += static_cast<double>(hits) / p;
    }
    return sum / std::min<double>(k, static_cast<double>(distinct.size()));
}

inline double map(const std::vector<std::vector<std::string>>& rankings,
                  const std::vector<std::vector<std::string>>& targets, int k) {
    double s = 0.0;
    for (std::size_t q = 0; q < rankings.size(); ++q) s += average_precision(rankings[q], targets[q], k);
    return s / static_cast<double>(rankings.size());
}

}  // namespace oracle

}  // namespace fticir::testing
