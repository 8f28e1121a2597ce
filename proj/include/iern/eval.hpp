#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iern/error.hpp"
#include "iern/rng.hpp"

// Metrics (confusion matrices, per-class / mean accuracy) and the
// confounder-stratum construction pipeline: cluster embedding vectors, score
// cluster importance, keep the top-M as strata and send the rest through a
// coarse fallback grouping.

namespace iern {

// ---- confusion / accuracy ------------------------------------------------------

struct EvalReport {
    int n_classes = 0;
    std::vector<std::vector<std::int64_t>> confusion;  // rows = truth, cols = prediction
    std::vector<double> per_class_acc;
    std::vector<bool> class_present;  // false marks empty truth rows
    double mean_acc = 0.0;
    int fold_id = 0;
    std::string split = "test";
    std::string method = "unknown";
    std::uint64_t seed = 0;

    std::int64_t row_sum(int i) const {
        return std::accumulate(confusion[static_cast<std::size_t>(i)].begin(),
                               confusion[static_cast<std::size_t>(i)].end(), std::int64_t{0});
    }

    void validate() const {
        if (n_classes < 1 || static_cast<int>(confusion.size()) != n_classes)
            throw ContractError("EvalReport: bad confusion shape");
        double acc_sum = 0.0;
        int present = 0;
        for (int i = 0; i < n_classes; ++i) {
            if (static_cast<int>(confusion[static_cast<std::size_t>(i)].size()) != n_classes)
                throw ContractError("EvalReport: ragged confusion row");
            const std::int64_t rs = row_sum(i);
            if (class_present[static_cast<std::size_t>(i)] != (rs > 0))
                throw ContractError("EvalReport: class_present inconsistent with row sums");
            if (rs > 0) {
                const double expect = static_cast<double>(confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]) /
                                      static_cast<double>(rs);
                if (std::fabs(per_class_acc[static_cast<std::size_t>(i)] - expect) > 1e-12)
                    throw ContractError("EvalReport: per-class accuracy mismatch");
                acc_sum += per_class_acc[static_cast<std::size_t>(i)];
                ++present;
            } else if (per_class_acc[static_cast<std::size_t>(i)] != 0.0) {
                throw ContractError("EvalReport: empty row must have zero accuracy");
            }
        }
        const double expect_mean = present > 0 ? acc_sum / present : 0.0;
        if (std::fabs(mean_acc - expect_mean) > 1e-12)
            throw ContractError("EvalReport: mean accuracy mismatch");
    }
};

inline EvalReport confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                            int n_classes) {
    if (preds.size() != labels.size())
        throw ContractError("confusion: prediction/label length mismatch");
    if (n_classes < 1) throw ContractError("confusion: need at least one class");
    EvalReport r;
    r.n_classes = n_classes;
    r.confusion.assign(static_cast<std::size_t>(n_classes),
                       std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes)
            throw ContractError("confusion: label out of range");
        ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    }
    r.per_class_acc.assign(static_cast<std::size_t>(n_classes), 0.0);
    r.class_present.assign(static_cast<std::size_t>(n_classes), false);
    double acc_sum = 0.0;
    int present = 0;
    for (int i = 0; i < n_classes; ++i) {
        const std::int64_t rs = r.row_sum(i);
        if (rs > 0) {
            r.class_present[static_cast<std::size_t>(i)] = true;
            r.per_class_acc[static_cast<std::size_t>(i)] =
                static_cast<double>(r.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]) / static_cast<double>(rs);
            acc_sum += r.per_class_acc[static_cast<std::size_t>(i)];
            ++present;
        }
    }
    r.mean_acc = present > 0 ? acc_sum / present : 0.0;
    return r;
}

inline void save_report(const EvalReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("save_report: cannot open " + path);
    f.precision(17);
    f << "iern-report v1\n";
    f << "method " << r.method << '\n';
    f << "split " << r.split << '\n';
    f << "fold " << r.fold_id << '\n';
    f << "seed " << r.seed << '\n';
    f << "classes " << r.n_classes << '\n';
    f << "confusion\n";
    for (const auto& row : r.confusion) {
        for (std::int64_t v : row) f << v << ' ';
        f << '\n';
    }
    f << "per_class_acc";
    for (double v : r.per_class_acc) f << ' ' << v;
    f << "\nmean_acc " << r.mean_acc << '\n';
    if (!f) throw IoError("save_report: write failed " + path);
}

inline EvalReport load_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_report: cannot open " + path);
    std::string magic, version;
    f >> magic >> version;
    if (magic != "iern-report" || version != "v1")
        throw IoError("load_report: unrecognized header in " + path);
    EvalReport r;
    std::string key;
    while (f >> key) {
        if (key == "method")
            f >> r.method;
        else if (key == "split")
            f >> r.split;
        else if (key == "fold")
            f >> r.fold_id;
        else if (key == "seed")
            f >> r.seed;
        else if (key == "classes")
            f >> r.n_classes;
        else if (key == "confusion") {
            r.confusion.assign(static_cast<std::size_t>(r.n_classes),
                               std::vector<std::int64_t>(static_cast<std::size_t>(r.n_classes)));
            for (auto& row : r.confusion)
                for (auto& v : row) f >> v;
        } else if (key == "per_class_acc") {
            r.per_class_acc.assign(static_cast<std::size_t>(r.n_classes), 0.0);
            for (auto& v : r.per_class_acc) f >> v;
        } else if (key == "mean_acc")
            f >> r.mean_acc;
        else
            throw IoError("load_report: unknown key " + key);
    }
    r.class_present.assign(static_cast<std::size_t>(r.n_classes), false);
    for (int i = 0; i < r.n_classes; ++i)
        r.class_present[static_cast<std::size_t>(i)] = r.row_sum(i) > 0;
    r.validate();
    return r;
}

// ---- k-means ----------------------------------------------------------------------

struct KmeansResult {
    std::vector<int> labels;
    std::vector<std::vector<double>> centers;
    double objective = 0.0;                  // sum of squared distances
    std::vector<double> objective_history;   // one entry per Lloyd iteration
};

namespace detail {

inline double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// Lloyd iterations with seeded distinct-point initialization. Deterministic
/// under seed; the objective never increases between iterations.
inline KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                           std::uint64_t seed, int max_iters = 100) {
    if (points.empty()) throw ConfigError("kmeans: no points");
    if (k < 1) throw ConfigError("kmeans: k must be positive");

    std::vector<std::size_t> distinct;
    {
        std::set<std::vector<double>> seen;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (seen.insert(points[i]).second) distinct.push_back(i);
    }
    if (k > static_cast<int>(distinct.size()))
        throw ConfigError("kmeans: k exceeds the number of distinct points");

    Rng rng(derive_seed(seed, "kmeans-init"));
    for (int j = 0; j < k; ++j) {  // partial Fisher-Yates over distinct points
        const auto pick = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(distinct.size() - static_cast<std::size_t>(j)))) + static_cast<std::size_t>(j);
        std::swap(distinct[static_cast<std::size_t>(j)], distinct[pick]);
    }
    KmeansResult res;
    res.centers.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) res.centers.push_back(points[distinct[static_cast<std::size_t>(j)]]);
    res.labels.assign(points.size(), 0);

    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = iter == 0;
        double obj = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            int best = 0;
            double best_d = detail::sqdist(points[i], res.centers[0]);
            for (int j = 1; j < k; ++j) {
                const double d = detail::sqdist(points[i], res.centers[static_cast<std::size_t>(j)]);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            obj += best_d;
            if (res.labels[i] != best) {
                res.labels[i] = best;
                changed = true;
            }
        }
        res.objective_history.push_back(obj);
        res.objective = obj;
        if (!changed) break;
        // recompute centers; an emptied cluster keeps its previous center
        const std::size_t dim = points[0].size();
        std::vector<std::vector<double>> sums(static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
        std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            ++counts[static_cast<std::size_t>(res.labels[i])];
            for (std::size_t d = 0; d < dim; ++d) sums[static_cast<std::size_t>(res.labels[i])][d] += points[i][d];
        }
        for (int j = 0; j < k; ++j)
            if (counts[static_cast<std::size_t>(j)] > 0)
                for (std::size_t d = 0; d < dim; ++d)
                    res.centers[static_cast<std::size_t>(j)][d] = sums[static_cast<std::size_t>(j)][d] / static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
    return res;
}

// ---- cluster importance ----------------------------------------------------------

/// I(c) = P(c) * sum_e P(e|c) ln P(e|c), with 0 ln 0 := 0. Always <= 0; a pure
/// cluster scores exactly 0.
inline std::vector<double> importance_scores(
    const std::vector<std::vector<std::int64_t>>& cluster_emotion_counts) {
    std::int64_t grand = 0;
    for (const auto& row : cluster_emotion_counts)
        for (std::int64_t v : row) {
            if (v < 0) throw ContractError("importance_scores: negative count");
            grand += v;
        }
    if (grand <= 0) throw ContractError("importance_scores: no items");
    std::vector<double> out;
    out.reserve(cluster_emotion_counts.size());
    for (const auto& row : cluster_emotion_counts) {
        const auto total = std::accumulate(row.begin(), row.end(), std::int64_t{0});
        if (total <= 0) throw ContractError("importance_scores: empty cluster");
        const double pc = static_cast<double>(total) / static_cast<double>(grand);
        double ent = 0.0;  // sum p log p (negative entropy)
        for (std::int64_t v : row) {
            if (v == 0) continue;
            const double p = static_cast<double>(v) / static_cast<double>(total);
            ent += p * std::log(p);
        }
        out.push_back(pc * ent);
    }
    return out;
}

// ---- stratum construction ----------------------------------------------------------

struct StratumAssignment {
    std::vector<int> cluster_labels;      // kmeans label per item
    std::vector<int> item_stratum;        // final stratum id per item
    std::vector<int> selected_clusters;   // the M clusters kept as individual strata
    std::vector<double> importance;       // score per non-empty cluster id (NaN for empty)
    int n_strata = 0;                     // M + number of fallback groups
};

/// Maps a leftover cluster's center to a coarse group id in [0, n_groups).
using FallbackClassifier = std::function<int(const std::vector<double>& center)>;

inline StratumAssignment build_strata(const std::vector<std::vector<double>>& embeddings,
                                      const std::vector<int>& emotion_labels, int n_emotions,
                                      int k, int m, int n_fallback_groups,
                                      const FallbackClassifier& fallback, std::uint64_t seed,
                                      bool rank_descending = true) {
    if (embeddings.size() != emotion_labels.size())
        throw ContractError("build_strata: embedding/label length mismatch");
    if (m > k) throw ConfigError("build_strata: M cannot exceed k");
    if (m < 0 || n_fallback_groups < 0) throw ConfigError("build_strata: negative configuration");

    StratumAssignment sa;
    const KmeansResult km = kmeans(embeddings, k, seed);
    sa.cluster_labels = km.labels;

    std::vector<std::vector<std::int64_t>> counts(static_cast<std::size_t>(k),
                                                  std::vector<std::int64_t>(static_cast<std::size_t>(n_emotions), 0));
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const int e = emotion_labels[i];
        if (e < 0 || e >= n_emotions) throw ContractError("build_strata: emotion label out of range");
        ++counts[static_cast<std::size_t>(km.labels[i])][static_cast<std::size_t>(e)];
    }

    std::vector<int> occupied;
    std::vector<std::vector<std::int64_t>> occupied_counts;
    for (int c = 0; c < k; ++c) {
        const auto total = std::accumulate(counts[static_cast<std::size_t>(c)].begin(), counts[static_cast<std::size_t>(c)].end(), std::int64_t{0});
        if (total > 0) {
            occupied.push_back(c);
            occupied_counts.push_back(counts[static_cast<std::size_t>(c)]);
        }
    }
    const std::vector<double> scores = importance_scores(occupied_counts);
    sa.importance.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < occupied.size(); ++i) sa.importance[static_cast<std::size_t>(occupied[i])] = scores[i];

    std::vector<std::size_t> order(occupied.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return rank_descending ? scores[a] > scores[b] : scores[a] < scores[b];
        return occupied[a] < occupied[b];
    });

    const int m_eff = std::min<int>(m, static_cast<int>(occupied.size()));
    std::vector<int> cluster_to_stratum(static_cast<std::size_t>(k), -1);
    for (int r = 0; r < m_eff; ++r) {
        const int cluster = occupied[order[static_cast<std::size_t>(r)]];
        sa.selected_clusters.push_back(cluster);
        cluster_to_stratum[static_cast<std::size_t>(cluster)] = r;
    }
    bool any_fallback = false;
    for (int c = 0; c < k; ++c) {
        if (cluster_to_stratum[static_cast<std::size_t>(c)] >= 0) continue;
        const int g = fallback(km.centers[static_cast<std::size_t>(c)]);
        if (g < 0 || g >= n_fallback_groups)
            throw ConfigError("build_strata: fallback group out of range");
        cluster_to_stratum[static_cast<std::size_t>(c)] = m_eff + g;
        any_fallback = true;
    }
    sa.n_strata = m_eff + (any_fallback ? n_fallback_groups : 0);

    sa.item_stratum.resize(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i)
        sa.item_stratum[i] = cluster_to_stratum[static_cast<std::size_t>(km.labels[i])];
    return sa;
}

// ---- flat-binary embedding export ---------------------------------------------------

inline void save_embeddings(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels, const std::string& stem) {
    if (features.size() != labels.size())
        throw ContractError("save_embeddings: feature/label length mismatch");
    const std::size_t dim = features.empty() ? 0 : features[0].size();
    std::ofstream mf(stem + ".manifest");
    if (!mf) throw IoError("save_embeddings: cannot open manifest");
    mf << "iern-embeddings v1\n";
    mf << "count " << features.size() << '\n';
    mf << "dim " << dim << '\n';
    const std::string blob = stem + ".bin";
    mf << "blob " << blob.substr(blob.find_last_of('/') + 1) << '\n';
    std::ofstream bf(blob, std::ios::binary);
    if (!bf) throw IoError("save_embeddings: cannot open blob");
    for (const auto& row : features) {
        if (row.size() != dim) throw ContractError("save_embeddings: ragged features");
        for (double v : row) {
            const float fv = static_cast<float>(v);
            bf.write(reinterpret_cast<const char*>(&fv), 4);
        }
    }
    for (int v : labels) {
        const std::int32_t iv = v;
        bf.write(reinterpret_cast<const char*>(&iv), 4);
    }
    if (!bf) throw IoError("save_embeddings: write failed");
}

inline std::pair<std::vector<std::vector<double>>, std::vector<int>> load_embeddings(
    const std::string& stem) {
    std::ifstream mf(stem + ".manifest");
    if (!mf) throw IoError("load_embeddings: cannot open manifest");
    std::string magic, version, key, blob_name;
    std::size_t count = 0, dim = 0;
    mf >> magic >> version;
    if (magic != "iern-embeddings" || version != "v1")
        throw IoError("load_embeddings: unrecognized header");
    while (mf >> key) {
        if (key == "count")
            mf >> count;
        else if (key == "dim")
            mf >> dim;
        else if (key == "blob")
            mf >> blob_name;
        else
            throw IoError("load_embeddings: unknown key " + key);
    }
    const auto slash = stem.find_last_of('/');
    const std::string dir = slash == std::string::npos ? "" : stem.substr(0, slash + 1);
    std::ifstream bf(dir + blob_name, std::ios::binary);
    if (!bf) throw IoError("load_embeddings: cannot open blob");
    std::vector<std::vector<double>> features(count, std::vector<double>(dim));
    for (auto& row : features)
        for (auto& v : row) {
            float fv = 0.0f;
            bf.read(reinterpret_cast<char*>(&fv), 4);
            v = static_cast<double>(fv);
        }
    std::vector<int> labels(count);
    for (auto& v : labels) {
        std::int32_t iv = 0;
        bf.read(reinterpret_cast<char*>(&iv), 4);
        v = iv;
    }
    if (!bf) throw IoError("load_embeddings: blob truncated");
    return {features, labels};
}

}  // namespace iern
