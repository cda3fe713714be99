#pragma once

// Base model: embedding head, squared-difference relation features with batch
// normalization, sigmoid linear classifier and summed binary cross-entropy.

#include <sggnn/autodiff.hpp>
#include <sggnn/corpus.hpp>
#include <sggnn/kernels.hpp>
#include <sggnn/params.hpp>

#include <optional>
#include <span>
#include <vector>

namespace sggnn {

enum class Mode { train, eval };

/// Tape leaves for every trainable tensor of a ModelParams.
struct BoundParams {
    const ModelParams* source = nullptr;
    ad::Var embed_w1, embed_b1, embed_w2, embed_b2;
    ad::Var rel_gamma, rel_beta;
    ad::Var pg_w, pg_b;
    ad::Var gg_w, gg_b;
    ad::Var msg_w1, msg_b1, msg_gamma1, msg_beta1;
    ad::Var msg_w2, msg_b2, msg_gamma2, msg_beta2;
    ad::Var proj;
};

inline BoundParams bind(ad::Tape& tape, const ModelParams& m, bool requires_grad) {
    auto leaf = [&](const Matrix& t) { return requires_grad ? tape.variable(t) : tape.constant(t); };
    BoundParams b;
    b.source = &m;
    b.embed_w1 = leaf(m.embed.w1);
    b.embed_b1 = leaf(m.embed.b1);
    b.embed_w2 = leaf(m.embed.w2);
    b.embed_b2 = leaf(m.embed.b2);
    b.rel_gamma = leaf(m.relation_bn.gamma);
    b.rel_beta = leaf(m.relation_bn.beta);
    b.pg_w = leaf(m.pg_classifier.w);
    b.pg_b = leaf(m.pg_classifier.b);
    b.gg_w = leaf(m.gg_classifier.w);
    b.gg_b = leaf(m.gg_classifier.b);
    b.msg_w1 = leaf(m.message.w1);
    b.msg_b1 = leaf(m.message.b1);
    b.msg_gamma1 = leaf(m.message.bn1.gamma);
    b.msg_beta1 = leaf(m.message.bn1.beta);
    b.msg_w2 = leaf(m.message.w2);
    b.msg_b2 = leaf(m.message.b2);
    b.msg_gamma2 = leaf(m.message.bn2.gamma);
    b.msg_beta2 = leaf(m.message.bn2.beta);
    b.proj = leaf(m.compat.proj);
    return b;
}

/// Reads leaf gradients back into a ModelParams-shaped container (statistics stay zero).
inline ModelParams collect_gradients(const BoundParams& b) {
    ModelParams g = zeros_like(*b.source);
    auto take = [](ad::Var v, Matrix& dst) {
        if (!v.grad().empty()) {
            dst = v.grad();
        }
    };
    take(b.embed_w1, g.embed.w1);
    take(b.embed_b1, g.embed.b1);
    take(b.embed_w2, g.embed.w2);
    take(b.embed_b2, g.embed.b2);
    take(b.rel_gamma, g.relation_bn.gamma);
    take(b.rel_beta, g.relation_bn.beta);
    take(b.pg_w, g.pg_classifier.w);
    take(b.pg_b, g.pg_classifier.b);
    take(b.gg_w, g.gg_classifier.w);
    take(b.gg_b, g.gg_classifier.b);
    take(b.msg_w1, g.message.w1);
    take(b.msg_b1, g.message.b1);
    take(b.msg_gamma1, g.message.bn1.gamma);
    take(b.msg_beta1, g.message.bn1.beta);
    take(b.msg_w2, g.message.w2);
    take(b.msg_b2, g.message.b2);
    take(b.msg_gamma2, g.message.bn2.gamma);
    take(b.msg_beta2, g.message.bn2.beta);
    take(b.proj, g.compat.proj);
    return g;
}

inline Matrix raw_matrix(std::span<const EmbeddingItem> items, std::size_t dim) {
    Matrix x(items.size(), dim);
    for (std::size_t r = 0; r < items.size(); ++r) {
        if (items[r].raw.size() != dim) {
            throw ShapeError("raw feature of item " + std::to_string(items[r].item_id) + " has dimension " +
                             std::to_string(items[r].raw.size()) + ", model expects " + std::to_string(dim));
        }
        std::copy(items[r].raw.begin(), items[r].raw.end(), x.row(r).begin());
    }
    return x;
}

// --- differentiable building blocks ---------------------------------------

inline ad::Var embed(const BoundParams& p, ad::Var raw) {
    if (raw.value().cols() != p.embed_w1.value().rows()) {
        throw ShapeError("embed: input width " + std::to_string(raw.value().cols()) + ", head expects " +
                         std::to_string(p.embed_w1.value().rows()));
    }
    ad::Var h = ad::relu(ad::add_bias(ad::matmul(raw, p.embed_w1), p.embed_b1));
    return ad::add_bias(ad::matmul(h, p.embed_w2), p.embed_b2);
}

/// BN((a - b)^2) row-wise. In train mode the batch statistics are folded into
/// `stats` (when given) with its momentum.
inline ad::Var relation_features(const BoundParams& p, ad::Var a, ad::Var b, Mode mode,
                                 BatchNormParams* stats = nullptr) {
    require_same_shape(a.value(), b.value(), "relation_features");
    ad::Var sq = ad::square(ad::sub(a, b));
    const BatchNormParams& bn = p.source->relation_bn;
    if (mode == Mode::eval) {
        return ad::batch_norm_eval(sq, p.rel_gamma, p.rel_beta, bn.running_mean, bn.running_var, bn.eps);
    }
    kernels::BatchNormTrace trace;
    ad::Var out = ad::batch_norm_train(sq, p.rel_gamma, p.rel_beta, bn.eps, &trace);
    if (stats) {
        stats->update_running(trace.mean, trace.var, sq.value().rows());
    }
    return out;
}

// --- plain API ---------------------------------------------------------------

/// Embeds each row of `raw` (N x D_raw) into N x D_feat.
inline Matrix embed(const EmbedHeadParams& head, const Matrix& raw) {
    if (raw.cols() != head.w1.rows()) {
        throw ShapeError("embed: input width " + std::to_string(raw.cols()) + ", head expects " +
                         std::to_string(head.w1.rows()));
    }
    Matrix h = kernels::relu(kernels::add_bias(matmul(raw, head.w1), head.b1));
    return kernels::add_bias(matmul(h, head.w2), head.b2);
}

inline std::vector<double> embed(const EmbedHeadParams& head, std::span<const double> raw) {
    return embed(head, Matrix::row_vector(raw)).values();
}

/// Batched relation features for row pairs (a_i, b_i). Train mode normalizes by
/// batch statistics (needs >= 2 rows) and updates bn's running statistics.
inline Matrix relation_feature(const Matrix& a, const Matrix& b, BatchNormParams& bn, Mode mode) {
    require_same_shape(a, b, "relation_feature");
    Matrix sq = kernels::lincomb(a, b, 1.0, -1.0);
    for (double& v : sq.values()) {
        v = v * v;
    }
    if (mode == Mode::eval) {
        return kernels::batch_norm_eval(sq, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
    }
    kernels::BatchNormTrace trace;
    Matrix out = kernels::batch_norm_train(sq, bn.gamma, bn.beta, bn.eps, &trace);
    bn.update_running(trace.mean, trace.var, sq.rows());
    return out;
}

/// Single-pair eval-mode relation feature.
inline std::vector<double> relation_feature(std::span<const double> a, std::span<const double> b,
                                            const BatchNormParams& bn) {
    if (a.size() != b.size()) {
        throw ShapeError("relation_feature: vectors of different length");
    }
    BatchNormParams frozen = bn;
    return relation_feature(Matrix::row_vector(a), Matrix::row_vector(b), frozen, Mode::eval).values();
}

inline double logit(const ClassifierParams& clf, std::span<const double> d) {
    if (d.size() != clf.w.rows()) {
        throw ShapeError("classifier expects width " + std::to_string(clf.w.rows()) + ", got " +
                         std::to_string(d.size()));
    }
    return dot(d, clf.w.values()) + clf.b[0];
}

/// sigmoid(w . d + b)
inline double score(const ClassifierParams& clf, std::span<const double> d) {
    return kernels::sigmoid(logit(clf, d));
}

/// Summed BCE over the batch with predictions clamped to [1e-7, 1 - 1e-7].
inline double bce_loss(std::span<const double> preds, std::span<const double> labels) {
    if (preds.size() != labels.size()) {
        throw ShapeError("bce_loss: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double p = std::clamp(preds[i], kernels::kBceClamp, 1.0 - kernels::kBceClamp);
        loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    return loss;
}

/// Eval-mode relation features of (probe, g_i) for every gallery row; N x D_feat.
inline Matrix probe_gallery_features(const ModelParams& m, std::span<const double> probe_embed,
                                     const Matrix& gallery_embed) {
    Matrix probe_rows(gallery_embed.rows(), gallery_embed.cols());
    for (std::size_t r = 0; r < probe_rows.rows(); ++r) {
        std::copy(probe_embed.begin(), probe_embed.end(), probe_rows.row(r).begin());
    }
    BatchNormParams bn = m.relation_bn;
    return relation_feature(probe_rows, gallery_embed, bn, Mode::eval);
}

/// Base-model probe-gallery logits (pre-sigmoid), eval mode.
inline std::vector<double> pairwise_logits(const ModelParams& m, const EmbeddingItem& probe,
                                           std::span<const EmbeddingItem> gallery) {
    if (gallery.empty()) {
        return {};
    }
    const Matrix probe_embed = embed(m.embed, Matrix::row_vector(probe.raw));
    const Matrix gallery_embed = embed(m.embed, raw_matrix(gallery, m.raw_dim()));
    const Matrix d = probe_gallery_features(m, probe_embed.values(), gallery_embed);
    return kernels::linear_logits(d, m.pg_classifier.w, m.pg_classifier.b).values();
}

/// Base-model probe-gallery scores in (0, 1), eval mode.
inline std::vector<double> pairwise_scores(const ModelParams& m, const EmbeddingItem& probe,
                                           std::span<const EmbeddingItem> gallery) {
    auto s = pairwise_logits(m, probe, gallery);
    for (double& v : s) {
        v = kernels::sigmoid(v);
    }
    return s;
}

/// Relation feature payload of one probe-gallery node.
struct RelationFeature {
    std::vector<double> d;
    int label = 0;
    ItemId probe_item = 0;
    ItemId gallery_item = 0;
};

inline RelationFeature make_relation_feature(const ModelParams& m, const EmbeddingItem& probe,
                                             const EmbeddingItem& gallery) {
    const auto a = embed(m.embed, std::span<const double>(probe.raw));
    const auto b = embed(m.embed, std::span<const double>(gallery.raw));
    return {relation_feature(a, b, m.relation_bn), probe.identity_id == gallery.identity_id ? 1 : 0, probe.item_id,
            gallery.item_id};
}

} // namespace sggnn
