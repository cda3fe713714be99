#pragma once

// Similarity-guided message passing over the probe-gallery node graph.

#include <sggnn/autodiff.hpp>
#include <sggnn/relation.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace sggnn {

enum class WeightMode { similarity_guided, compatibility };

struct FusionConfig {
    double alpha = 0.9;
    std::size_t iterations = 1;
    WeightMode weight_mode = WeightMode::similarity_guided;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) {
            throw ConfigError("alpha must lie in [0, 1]");
        }
        if (iterations < 1) {
            throw ConfigError("fusion needs at least one iteration");
        }
    }
};

inline std::string to_string(WeightMode m) {
    return m == WeightMode::similarity_guided ? "similarity_guided" : "compatibility";
}

inline WeightMode parse_weight_mode(std::string_view s) {
    if (s == "similarity_guided" || s == "sg") {
        return WeightMode::similarity_guided;
    }
    if (s == "compatibility" || s == "compat") {
        return WeightMode::compatibility;
    }
    throw ConfigError("unknown weight mode '" + std::string(s) + "'");
}

/// One probe with N gallery nodes and everything computed on the way to the scores.
struct BatchGraph {
    ItemId probe = 0;
    std::vector<ItemId> gallery;
    Matrix node_features;  // N x D, d^(0)
    Matrix gallery_scores; // N x N similarity logits (empty in compatibility mode)
    Matrix edge_weights;   // N x N, last weights used
    Matrix messages;       // N x D, t^(0)
    Matrix refined;        // N x D, d^(t)
    std::vector<double> base_logits;
    std::vector<double> logits;
};

// --- differentiable graph ----------------------------------------------------

inline ad::Var message_layer(ad::Var x, ad::Var w, ad::Var b, ad::Var gamma, ad::Var beta, const BatchNormParams& bn,
                             Mode mode, BatchNormParams* stats) {
    ad::Var h = ad::add_bias(ad::matmul(x, w), b);
    ad::Var n;
    if (mode == Mode::eval) {
        n = ad::batch_norm_eval(h, gamma, beta, bn.running_mean, bn.running_var, bn.eps);
    } else {
        kernels::BatchNormTrace trace;
        n = ad::batch_norm_train(h, gamma, beta, bn.eps, &trace);
        if (stats) {
            stats->update_running(trace.mean, trace.var, h.value().rows());
        }
    }
    return ad::relu(n);
}

/// t_i = F(d_i) for every row. `stats` receives running-statistics updates in train mode.
inline ad::Var compute_messages(const BoundParams& p, ad::Var nodes, Mode mode, MessageNetParams* stats = nullptr) {
    const MessageNetParams& net = p.source->message;
    ad::Var h = message_layer(nodes, p.msg_w1, p.msg_b1, p.msg_gamma1, p.msg_beta1, net.bn1, mode,
                              stats ? &stats->bn1 : nullptr);
    return message_layer(h, p.msg_w2, p.msg_b2, p.msg_gamma2, p.msg_beta2, net.bn2, mode,
                         stats ? &stats->bn2 : nullptr);
}

/// Row softmax of the scaled inner product of projected node features, zero diagonal.
inline ad::Var edge_weights_compat(const BoundParams& p, ad::Var nodes) {
    ad::Var z = ad::matmul(nodes, p.proj);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(p.proj.value().cols()));
    return ad::softmax_offdiag(ad::scale(ad::matmul_nt(z, z), inv_sqrt));
}

struct GraphVars {
    ad::Var edge_weights;
    ad::Var messages; // first-iteration messages
    ad::Var refined;
    ad::Var logits;
};

/// Fusion plus final probe-gallery classification. `gallery_logits` is required in
/// similarity-guided mode. Each iteration recomputes messages from the previous
/// iteration's features; compatibility weights are recomputed from them too.
inline GraphVars run_graph(const BoundParams& p, ad::Var nodes, std::optional<ad::Var> gallery_logits,
                           const FusionConfig& cfg, Mode mode, MessageNetParams* stats = nullptr) {
    cfg.validate();
    const std::size_t n = nodes.value().rows();
    if (n == 0) {
        throw ShapeError("graph needs at least one gallery node");
    }
    std::optional<ad::Var> w;
    if (cfg.weight_mode == WeightMode::similarity_guided) {
        if (!gallery_logits) {
            throw ShapeError("similarity-guided weights need gallery-gallery logits");
        }
        if (gallery_logits->value().rows() != n || gallery_logits->value().cols() != n) {
            throw ShapeError("gallery logits " + gallery_logits->value().shape_string() + " for " +
                             std::to_string(n) + " nodes");
        }
        w = ad::softmax_offdiag(*gallery_logits);
    }
    ad::Var current = nodes;
    std::optional<ad::Var> first_messages;
    for (std::size_t k = 0; k < cfg.iterations; ++k) {
        ad::Var msgs = compute_messages(p, current, mode, stats);
        if (!first_messages) {
            first_messages = msgs;
        }
        if (cfg.weight_mode == WeightMode::compatibility) {
            w = edge_weights_compat(p, current);
        }
        current = ad::lincomb(current, ad::matmul(*w, msgs), 1.0 - cfg.alpha, cfg.alpha);
    }
    ad::Var logits = ad::linear_logits(current, p.pg_w, p.pg_b);
    return {*w, *first_messages, current, logits};
}

/// Gallery-gallery similarity logits over all unordered pairs, scattered into N x N.
inline ad::Var gallery_pair_logits(const BoundParams& p, ad::Var gallery_embed, Mode mode,
                                   std::vector<std::pair<std::size_t, std::size_t>>* pairs_out = nullptr,
                                   ad::Var* pair_logits_out = nullptr) {
    const std::size_t n = gallery_embed.value().rows();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            pairs.emplace_back(i, j);
            left.push_back(i);
            right.push_back(j);
        }
    }
    if (pairs.empty()) {
        return gallery_embed.tape->constant(Matrix(n, n));
    }
    ad::Var d = relation_features(p, ad::gather_rows(gallery_embed, left), ad::gather_rows(gallery_embed, right), mode);
    ad::Var pl = ad::linear_logits(d, p.gg_w, p.gg_b);
    if (pairs_out) {
        *pairs_out = pairs;
    }
    if (pair_logits_out) {
        *pair_logits_out = pl;
    }
    return ad::scatter_symmetric(pl, n, std::move(pairs));
}

// --- plain API -----------------------------------------------------------------

/// Softmax edge weights from gallery-gallery similarity logits; W_ii = 0.
inline Matrix edge_weights_sg(const Matrix& gallery_scores) { return kernels::softmax_offdiag(gallery_scores); }

inline Matrix edge_weights_compat(const ModelParams& m, const Matrix& node_features) {
    ad::Tape t;
    const BoundParams p = bind(t, m, false);
    return edge_weights_compat(p, t.constant(node_features)).value();
}

/// Row-wise message network. Train mode uses batch statistics (N >= 2) and updates net's running statistics.
inline Matrix compute_messages(MessageNetParams& net, const Matrix& node_features, Mode mode) {
    ModelParams holder;
    holder.message = net;
    ad::Tape t;
    BoundParams p;
    p.source = &holder;
    p.msg_w1 = t.constant(net.w1);
    p.msg_b1 = t.constant(net.b1);
    p.msg_gamma1 = t.constant(net.bn1.gamma);
    p.msg_beta1 = t.constant(net.bn1.beta);
    p.msg_w2 = t.constant(net.w2);
    p.msg_b2 = t.constant(net.b2);
    p.msg_gamma2 = t.constant(net.bn2.gamma);
    p.msg_beta2 = t.constant(net.bn2.beta);
    return compute_messages(p, t.constant(node_features), mode, mode == Mode::train ? &net : nullptr).value();
}

using MessageFn = std::function<Matrix(const Matrix& features)>;

/// One fusion step: (1 - alpha) * d + alpha * W * t.
inline Matrix fuse_step(const Matrix& node_features, const Matrix& messages, const Matrix& w, double alpha) {
    require_same_shape(node_features, messages, "fuse");
    if (w.rows() != node_features.rows() || w.cols() != node_features.rows()) {
        throw ShapeError("fuse: weights " + w.shape_string() + " for " + std::to_string(node_features.rows()) +
                         " nodes");
    }
    return kernels::lincomb(node_features, matmul(w, messages), 1.0 - alpha, alpha);
}

/// Iterated fusion. With `recompute` empty the messages stay frozen at `messages`;
/// otherwise iteration k > 1 uses recompute(d^(k-1)).
inline Matrix fuse(const Matrix& node_features, const Matrix& messages, const Matrix& w, const FusionConfig& cfg,
                   const MessageFn& recompute = {}) {
    cfg.validate();
    Matrix current = node_features;
    Matrix msgs = messages;
    for (std::size_t k = 0; k < cfg.iterations; ++k) {
        if (k > 0 && recompute) {
            msgs = recompute(current);
        }
        current = fuse_step(current, msgs, w, cfg.alpha);
    }
    return current;
}

/// Eval-mode graph scoring from embeddings. `gallery_logits`, when given, must be the
/// N x N gallery-gallery similarity logits; otherwise they are computed here.
inline BatchGraph score_graph(const ModelParams& m, std::span<const double> probe_embed, const Matrix& gallery_embed,
                              const Matrix* gallery_logits, const FusionConfig& cfg) {
    const std::size_t n = gallery_embed.rows();
    if (n == 0) {
        throw ShapeError("graph needs at least one gallery item");
    }
    ad::Tape t;
    const BoundParams p = bind(t, m, false);
    BatchGraph g;
    g.node_features = probe_gallery_features(m, probe_embed, gallery_embed);
    ad::Var nodes = t.constant(g.node_features);
    std::optional<ad::Var> gl;
    if (cfg.weight_mode == WeightMode::similarity_guided) {
        gl = gallery_logits ? t.constant(*gallery_logits) : gallery_pair_logits(p, t.constant(gallery_embed), Mode::eval);
        g.gallery_scores = gl->value();
    }
    const GraphVars out = run_graph(p, nodes, gl, cfg, Mode::eval);
    g.edge_weights = out.edge_weights.value();
    g.messages = out.messages.value();
    g.refined = out.refined.value();
    g.logits = out.logits.value().values();
    g.base_logits = kernels::linear_logits(g.node_features, m.pg_classifier.w, m.pg_classifier.b).values();
    return g;
}

struct SggnnOutput {
    std::vector<double> scores; // sigmoid of graph.logits
    BatchGraph graph;
};

/// Full eval-mode pipeline for one probe against N gallery items.
inline SggnnOutput sggnn_forward(const ModelParams& m, const EmbeddingItem& probe,
                                 std::span<const EmbeddingItem> gallery, const FusionConfig& cfg) {
    const Matrix probe_embed = embed(m.embed, Matrix::row_vector(probe.raw));
    const Matrix gallery_embed = embed(m.embed, raw_matrix(gallery, m.raw_dim()));
    SggnnOutput out;
    out.graph = score_graph(m, probe_embed.values(), gallery_embed, nullptr, cfg);
    out.graph.probe = probe.item_id;
    for (const auto& it : gallery) {
        out.graph.gallery.push_back(it.item_id);
    }
    out.scores = out.graph.logits;
    for (double& v : out.scores) {
        v = kernels::sigmoid(v);
    }
    return out;
}

/// Text dump of a graph: edge-weight rows and per-node score changes.
inline std::string format_batch_graph(const BatchGraph& g) {
    std::ostringstream os;
    os.precision(9);
    os << "probe " << g.probe << "\n";
    os << "nodes " << g.gallery.size() << "\n";
    os << "node gallery_item base_logit refined_logit delta\n";
    for (std::size_t i = 0; i < g.gallery.size(); ++i) {
        os << i << ' ' << g.gallery[i] << ' ' << g.base_logits[i] << ' ' << g.logits[i] << ' '
           << (g.logits[i] - g.base_logits[i]) << "\n";
    }
    os << "edge_weights\n";
    for (std::size_t i = 0; i < g.edge_weights.rows(); ++i) {
        os << "W[" << i << "]";
        for (double v : g.edge_weights.row(i)) {
            os << ' ' << v;
        }
        os << "\n";
    }
    return os.str();
}

} // namespace sggnn
