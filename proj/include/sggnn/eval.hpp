#pragma once

// Retrieval evaluation: l2 pre-ranking, shortlist re-scoring, random-walk
// refinement, AP / CMC metrics and the sensitivity sweep.

#include <sggnn/graph.hpp>
#include <sggnn/relation.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace sggnn {

enum class Method { base, l2, sggnn, sggnn_wo_sg, random_walk };

inline constexpr std::array<Method, 5> kAllMethods{Method::base, Method::l2, Method::sggnn, Method::sggnn_wo_sg,
                                                   Method::random_walk};

inline std::string to_string(Method m) {
    switch (m) {
    case Method::base:
        return "base";
    case Method::l2:
        return "l2";
    case Method::sggnn:
        return "sggnn";
    case Method::sggnn_wo_sg:
        return "sggnn_wo_sg";
    case Method::random_walk:
        return "random_walk";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
    for (Method m : kAllMethods) {
        if (to_string(m) == s) {
            return m;
        }
    }
    return std::nullopt;
}

struct RankingResult {
    ItemId probe = 0;
    std::vector<ItemId> ranked_gallery;
    std::vector<double> scores;
    std::string method_tag;
};

struct Metrics {
    double mAP = 0.0;
    double cmc1 = 0.0;
    double cmc5 = 0.0;
    double cmc10 = 0.0;
    std::size_t num_queries = 0;
    std::size_t skipped = 0;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct EvalConfig {
    FusionConfig fusion;
    std::size_t shortlist = 100;
};

// --- metric primitives -------------------------------------------------------------

/// Mean of precision@k over the relevant positions of a ranked relevance list.
inline double average_precision(const std::vector<bool>& relevant) {
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < relevant.size(); ++k) {
        if (relevant[k]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return hits ? sum / static_cast<double>(hits) : 0.0;
}

/// 1-based rank of the first relevant entry, or 0 when there is none.
inline std::size_t first_hit_rank(const std::vector<bool>& relevant) {
    for (std::size_t k = 0; k < relevant.size(); ++k) {
        if (relevant[k]) {
            return k + 1;
        }
    }
    return 0;
}

/// Accumulates per-query AP and CMC in query order.
class MetricAccumulator {
public:
    void add(const std::vector<bool>& relevant) {
        const std::size_t first = first_hit_rank(relevant);
        if (first == 0) {
            ++skipped_;
            return;
        }
        ap_sum_ += average_precision(relevant);
        hit1_ += first <= 1;
        hit5_ += first <= 5;
        hit10_ += first <= 10;
        ++queries_;
    }

    Metrics result() const {
        Metrics m;
        m.num_queries = queries_;
        m.skipped = skipped_;
        if (queries_) {
            const double q = static_cast<double>(queries_);
            m.mAP = ap_sum_ / q;
            m.cmc1 = static_cast<double>(hit1_) / q;
            m.cmc5 = static_cast<double>(hit5_) / q;
            m.cmc10 = static_cast<double>(hit10_) / q;
        }
        return m;
    }

private:
    double ap_sum_ = 0.0;
    std::size_t hit1_ = 0;
    std::size_t hit5_ = 0;
    std::size_t hit10_ = 0;
    std::size_t queries_ = 0;
    std::size_t skipped_ = 0;
};

// --- ranking core ----------------------------------------------------------------------

/// Order of indices by score descending, ties by ascending item id.
inline std::vector<std::size_t> rank_order(const std::vector<double>& scores, const std::vector<ItemId>& ids) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return ids[a] < ids[b];
    });
    return order;
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// s' = (1 - alpha) (I - alpha W)^{-1} s, the fixed point of s <- (1 - alpha) s0 + alpha W s.
inline std::vector<double> random_walk_refine(const Matrix& w, std::span<const double> s, double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) {
        throw ConfigError("random walk alpha must lie in [0, 1)");
    }
    const std::size_t n = s.size();
    if (w.rows() != n || w.cols() != n) {
        throw ShapeError("random_walk_refine: weights " + w.shape_string() + " for " + std::to_string(n) + " scores");
    }
    if (alpha == 0.0) {
        return {s.begin(), s.end()};
    }
    Eigen::MatrixXd a(n, n);
    Eigen::VectorXd rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        rhs(static_cast<Eigen::Index>(i)) = s[i];
        for (std::size_t j = 0; j < n; ++j) {
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (i == j ? 1.0 : 0.0) - alpha * w(i, j);
        }
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    if (!(lu.rcond() > 1e-14)) {
        throw NumericError("random walk system is singular");
    }
    const Eigen::VectorXd x = lu.solve(rhs);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = (1.0 - alpha) * x(static_cast<Eigen::Index>(i));
        if (!std::isfinite(out[i])) {
            throw NumericError("random walk produced a non-finite score");
        }
    }
    return out;
}

/// Embedded probe and gallery, with optional precomputed gallery-gallery logits.
struct RankContext {
    ItemId probe = 0;
    std::vector<double> probe_embed;
    Matrix gallery_embed;
    std::vector<ItemId> gallery_ids;
    std::vector<IdentityId> gallery_identities;
    const Matrix* gallery_logits = nullptr; // N x N over gallery_embed rows, optional
};

namespace detail {

inline RankContext make_context(const ModelParams& m, const EmbeddingItem& probe,
                                std::span<const EmbeddingItem> gallery) {
    RankContext c;
    c.probe = probe.item_id;
    c.probe_embed = embed(m.embed, Matrix::row_vector(probe.raw)).values();
    c.gallery_embed = embed(m.embed, raw_matrix(gallery, m.raw_dim()));
    for (const auto& it : gallery) {
        c.gallery_ids.push_back(it.item_id);
        c.gallery_identities.push_back(it.identity_id);
    }
    return c;
}

inline std::vector<double> l2_scores(const RankContext& c) {
    std::vector<double> s(c.gallery_ids.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = -l2_distance(c.probe_embed, c.gallery_embed.row(i));
    }
    return s;
}

inline RankingResult make_result(const RankContext& c, const std::vector<std::size_t>& order,
                                 const std::vector<double>& scores, std::string tag) {
    RankingResult r;
    r.probe = c.probe;
    r.method_tag = std::move(tag);
    for (std::size_t i : order) {
        r.ranked_gallery.push_back(c.gallery_ids[i]);
        r.scores.push_back(scores[i]);
    }
    return r;
}

/// Shortlisted gallery-gallery logits, from the cache or computed for the subset.
inline Matrix shortlist_gallery_logits(const ModelParams& m, const RankContext& c,
                                       const std::vector<std::size_t>& shortlist) {
    if (c.gallery_logits) {
        return select_block(*c.gallery_logits, shortlist, shortlist);
    }
    ad::Tape t;
    const BoundParams p = bind(t, m, false);
    return gallery_pair_logits(p, t.constant(select_rows(c.gallery_embed, shortlist)), Mode::eval).value();
}

} // namespace detail

/// Ranks a context with one method. All shortlist methods re-score the top
/// `shortlist` l2 items and keep the remainder in l2 order (scores there are
/// negative l2 distances).
inline RankingResult rank_with(const ModelParams& m, const RankContext& c, Method method, const EvalConfig& cfg,
                               BatchGraph* graph_out = nullptr) {
    const std::size_t n = c.gallery_ids.size();
    const std::vector<double> l2 = detail::l2_scores(c);
    const std::vector<std::size_t> l2_order = rank_order(l2, c.gallery_ids);
    if (method == Method::l2 || n == 0) {
        return detail::make_result(c, l2_order, l2, to_string(method));
    }
    if (cfg.shortlist < 1) {
        throw ConfigError("shortlist size must be at least 1");
    }
    const std::size_t s = std::min(cfg.shortlist, n);
    const std::vector<std::size_t> shortlist(l2_order.begin(), l2_order.begin() + static_cast<std::ptrdiff_t>(s));
    const Matrix short_embed = select_rows(c.gallery_embed, shortlist);

    std::vector<double> short_scores;
    if (method == Method::base) {
        const Matrix d = probe_gallery_features(m, c.probe_embed, short_embed);
        short_scores = kernels::linear_logits(d, m.pg_classifier.w, m.pg_classifier.b).values();
    } else if (method == Method::random_walk) {
        const Matrix d = probe_gallery_features(m, c.probe_embed, short_embed);
        const auto base = kernels::linear_logits(d, m.pg_classifier.w, m.pg_classifier.b).values();
        const Matrix w = edge_weights_sg(detail::shortlist_gallery_logits(m, c, shortlist));
        short_scores = random_walk_refine(w, base, cfg.fusion.alpha);
    } else {
        FusionConfig fc = cfg.fusion;
        fc.weight_mode = method == Method::sggnn ? WeightMode::similarity_guided : WeightMode::compatibility;
        std::optional<Matrix> gl;
        if (fc.weight_mode == WeightMode::similarity_guided) {
            gl = detail::shortlist_gallery_logits(m, c, shortlist);
        }
        BatchGraph g = score_graph(m, c.probe_embed, short_embed, gl ? &*gl : nullptr, fc);
        short_scores = g.logits;
        if (graph_out) {
            g.probe = c.probe;
            g.gallery.clear();
            for (std::size_t i : shortlist) {
                g.gallery.push_back(c.gallery_ids[i]);
            }
            *graph_out = std::move(g);
        }
    }

    std::vector<ItemId> short_ids;
    for (std::size_t i : shortlist) {
        short_ids.push_back(c.gallery_ids[i]);
    }
    const std::vector<std::size_t> local = rank_order(short_scores, short_ids);
    std::vector<std::size_t> order;
    std::vector<double> scores(n);
    for (std::size_t k = 0; k < s; ++k) {
        scores[shortlist[k]] = short_scores[k];
    }
    for (std::size_t k : local) {
        order.push_back(shortlist[k]);
    }
    for (std::size_t k = s; k < n; ++k) {
        order.push_back(l2_order[k]);
        scores[l2_order[k]] = l2[l2_order[k]];
    }
    return detail::make_result(c, order, scores, to_string(method));
}

inline RankingResult l2_rank(const ModelParams& m, const EmbeddingItem& probe, std::span<const EmbeddingItem> gallery) {
    return rank_with(m, detail::make_context(m, probe, gallery), Method::l2, {});
}

/// Base-model logits re-rank the l2 shortlist.
inline RankingResult base_rank(const ModelParams& m, const EmbeddingItem& probe,
                               std::span<const EmbeddingItem> gallery, std::size_t shortlist_size = 100) {
    EvalConfig cfg;
    cfg.shortlist = shortlist_size;
    return rank_with(m, detail::make_context(m, probe, gallery), Method::base, cfg);
}

inline RankingResult sggnn_rank(const ModelParams& m, const EmbeddingItem& probe,
                                std::span<const EmbeddingItem> gallery, const FusionConfig& fusion,
                                std::size_t shortlist_size = 100) {
    EvalConfig cfg{fusion, shortlist_size};
    const Method method =
        fusion.weight_mode == WeightMode::similarity_guided ? Method::sggnn : Method::sggnn_wo_sg;
    return rank_with(m, detail::make_context(m, probe, gallery), method, cfg);
}

inline RankingResult random_walk_rank(const ModelParams& m, const EmbeddingItem& probe,
                                      std::span<const EmbeddingItem> gallery, double alpha,
                                      std::size_t shortlist_size = 100) {
    EvalConfig cfg;
    cfg.fusion.alpha = alpha;
    cfg.shortlist = shortlist_size;
    return rank_with(m, detail::make_context(m, probe, gallery), Method::random_walk, cfg);
}

/// Embeddings and gallery-gallery logits for a whole test corpus, computed once.
class CorpusCache {
public:
    CorpusCache(const ModelParams& m, const EmbeddingCorpus& corpus, bool with_pair_logits)
        : embed_(embed(m.embed, raw_matrix(corpus.items(), m.raw_dim()))) {
        if (with_pair_logits) {
            ad::Tape t;
            const BoundParams p = bind(t, m, false);
            pair_logits_ = gallery_pair_logits(p, t.constant(embed_), Mode::eval).value();
        }
    }

    const Matrix& embeddings() const noexcept { return embed_; }
    const Matrix& pair_logits() const noexcept { return pair_logits_; }

private:
    Matrix embed_;
    Matrix pair_logits_;
};

/// Every item serves once as probe against all other items. Probes without a
/// positive in their gallery are skipped and counted.
inline Metrics evaluate(const ModelParams& m, const EmbeddingCorpus& test, Method method, const EvalConfig& cfg,
                        const CorpusCache* cache = nullptr, std::vector<RankingResult>* rankings = nullptr) {
    std::optional<CorpusCache> local;
    if (!cache) {
        const bool need_logits = method == Method::sggnn || method == Method::random_walk;
        local.emplace(m, test, need_logits);
        cache = &*local;
    }
    const std::size_t n = test.size();
    MetricAccumulator acc;
    for (std::size_t q = 0; q < n; ++q) {
        std::vector<std::size_t> gallery;
        gallery.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != q) {
                gallery.push_back(j);
            }
        }
        RankContext c;
        c.probe = test[q].item_id;
        c.probe_embed = std::vector<double>(cache->embeddings().row(q).begin(), cache->embeddings().row(q).end());
        c.gallery_embed = select_rows(cache->embeddings(), gallery);
        Matrix block;
        if (!cache->pair_logits().empty()) {
            block = select_block(cache->pair_logits(), gallery, gallery);
            c.gallery_logits = &block;
        }
        std::map<ItemId, bool> relevant_by_id;
        for (std::size_t j : gallery) {
            c.gallery_ids.push_back(test[j].item_id);
            c.gallery_identities.push_back(test[j].identity_id);
            relevant_by_id[test[j].item_id] = test[j].identity_id == test[q].identity_id;
        }
        RankingResult r = rank_with(m, c, method, cfg);
        std::vector<bool> relevant;
        relevant.reserve(r.ranked_gallery.size());
        for (ItemId id : r.ranked_gallery) {
            relevant.push_back(relevant_by_id[id]);
        }
        acc.add(relevant);
        if (rankings) {
            rankings->push_back(std::move(r));
        }
    }
    return acc.result();
}

// --- reports -------------------------------------------------------------------------

struct MethodReport {
    std::string method;
    Metrics metrics;
};

inline constexpr std::string_view kMetricsCsvHeader = "method,mAP,cmc1,cmc5,cmc10,num_queries,skipped";

inline std::string format_metrics_csv(const std::vector<MethodReport>& rows) {
    std::string out(kMetricsCsvHeader);
    out += "\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%zu,%zu\n", r.method.c_str(), r.metrics.mAP,
                      r.metrics.cmc1, r.metrics.cmc5, r.metrics.cmc10, r.metrics.num_queries, r.metrics.skipped);
        out += buf;
    }
    return out;
}

inline std::string format_metrics_table(const std::vector<MethodReport>& rows) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %8s %8s %8s %8s %8s %8s\n", "method", "mAP", "top-1", "top-5", "top-10",
                  "queries", "skipped");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-14s %8.2f %8.2f %8.2f %8.2f %8zu %8zu\n", r.method.c_str(),
                      100.0 * r.metrics.mAP, 100.0 * r.metrics.cmc1, 100.0 * r.metrics.cmc5, 100.0 * r.metrics.cmc10,
                      r.metrics.num_queries, r.metrics.skipped);
        out += buf;
    }
    return out;
}

// --- sensitivity sweep -------------------------------------------------------------

struct SweepPoint {
    std::size_t shortlist = 100;
    std::size_t K = 4;
    double alpha = 0.9;
    std::size_t iterations = 1;
};

struct SweepRow {
    SweepPoint point;
    std::optional<Metrics> metrics;
    std::string error;
};

/// The nine rows of the published sensitivity table (top-K, K, alpha, t).
inline std::vector<SweepPoint> default_sweep_grid() {
    return {{100, 4, 0.9, 1}, {100, 3, 0.9, 1}, {100, 5, 0.9, 1}, {50, 4, 0.9, 1},  {150, 4, 0.9, 1},
            {100, 4, 0.9, 2}, {100, 4, 0.9, 3}, {100, 4, 0.5, 1}, {100, 4, 0.95, 1}};
}

inline std::vector<SweepPoint> cross_grid(const std::vector<std::size_t>& shortlists, const std::vector<std::size_t>& ks,
                                          const std::vector<double>& alphas,
                                          const std::vector<std::size_t>& iterations) {
    std::vector<SweepPoint> grid;
    for (std::size_t s : shortlists) {
        for (std::size_t k : ks) {
            for (double a : alphas) {
                for (std::size_t t : iterations) {
                    grid.push_back({s, k, a, t});
                }
            }
        }
    }
    return grid;
}

/// Evaluates method "sggnn" at each grid point with the checkpoint trained for that K.
/// A K without a checkpoint yields an error row instead of metrics.
inline std::vector<SweepRow> sensitivity_sweep(const std::map<std::size_t, ModelParams>& params_by_k,
                                               const EmbeddingCorpus& test, const std::vector<SweepPoint>& grid,
                                               WeightMode weight_mode = WeightMode::similarity_guided) {
    std::map<std::size_t, CorpusCache> caches;
    std::vector<SweepRow> rows;
    for (const SweepPoint& pt : grid) {
        SweepRow row;
        row.point = pt;
        auto it = params_by_k.find(pt.K);
        if (it == params_by_k.end()) {
            row.error = "missing checkpoint for K=" + std::to_string(pt.K);
            rows.push_back(std::move(row));
            continue;
        }
        auto cit = caches.find(pt.K);
        if (cit == caches.end()) {
            cit = caches.emplace(pt.K, CorpusCache(it->second, test, true)).first;
        }
        EvalConfig cfg;
        cfg.shortlist = pt.shortlist;
        cfg.fusion.alpha = pt.alpha;
        cfg.fusion.iterations = pt.iterations;
        cfg.fusion.weight_mode = weight_mode;
        const Method method = weight_mode == WeightMode::similarity_guided ? Method::sggnn : Method::sggnn_wo_sg;
        row.metrics = evaluate(it->second, test, method, cfg, &cit->second);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_sweep_csv(const std::vector<SweepRow>& rows, const std::string& corpus_name) {
    std::string out = "top_k,K,alpha,t," + corpus_name + "_mAP," + corpus_name + "_top1,error\n";
    char buf[256];
    for (const auto& r : rows) {
        if (r.metrics) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.4g,%zu,%.6f,%.6f,\n", r.point.shortlist, r.point.K,
                          r.point.alpha, r.point.iterations, r.metrics->mAP, r.metrics->cmc1);
        } else {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.4g,%zu,,,%s\n", r.point.shortlist, r.point.K, r.point.alpha,
                          r.point.iterations, r.error.c_str());
        }
        out += buf;
    }
    return out;
}

inline std::string format_sweep_table(const std::vector<SweepRow>& rows, const std::string& corpus_name) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-7s %3s %6s %3s | %-10s %s\n", "top-K", "K", "alpha", "t",
                  (corpus_name + " mAP").c_str(), "top-1");
    out += buf;
    for (const auto& r : rows) {
        if (r.metrics) {
            std::snprintf(buf, sizeof buf, "%-7zu %3zu %6.2f %3zu | %10.2f %6.2f\n", r.point.shortlist, r.point.K,
                          r.point.alpha, r.point.iterations, 100.0 * r.metrics->mAP, 100.0 * r.metrics->cmc1);
        } else {
            std::snprintf(buf, sizeof buf, "%-7zu %3zu %6.2f %3zu | error: %s\n", r.point.shortlist, r.point.K,
                          r.point.alpha, r.point.iterations, r.error.c_str());
        }
        out += buf;
    }
    return out;
}

} // namespace sggnn
