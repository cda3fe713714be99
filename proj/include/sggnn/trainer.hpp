#pragma once

#include <sggnn/graph.hpp>
#include <sggnn/relation.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sggnn {

struct SamplerConfig {
    std::size_t K = 4;  // images per identity, also the number of probes per batch
    std::size_t M = 48; // identities per batch
    std::uint64_t seed = 0;

    void validate() const {
        if (K < 2) {
            throw ConfigError("sampler K must be at least 2 (a probe and a gallery image per identity)");
        }
        if (M < 2) {
            throw ConfigError("sampler M must be at least 2");
        }
        if (K > M) {
            throw ConfigError("sampler K cannot exceed M: probes are drawn from distinct identities");
        }
    }
};

struct EpochState {
    std::size_t epoch = 0;
    std::size_t batch = 0;
};

/// K*M batch members (identity-major); K of them are probes, one per probe identity.
/// Each probe is scored against every other member of the batch.
struct MiniBatch {
    std::vector<std::size_t> members; // positions in the training corpus
    std::vector<ItemId> item_ids;
    std::vector<IdentityId> identities;
    std::vector<std::size_t> probes;  // indices into members
    std::vector<std::size_t> gallery; // indices into members that are not probes, K*(M-1) of them

    std::size_t size() const noexcept { return members.size(); }

    /// Members a probe is scored against: all members except the probe itself.
    std::vector<std::size_t> probe_gallery(std::size_t probe_slot) const {
        std::vector<std::size_t> g;
        g.reserve(members.size() - 1);
        for (std::size_t j = 0; j < members.size(); ++j) {
            if (j != probes[probe_slot]) {
                g.push_back(j);
            }
        }
        return g;
    }

    double pair_label(std::size_t a, std::size_t b) const { return identities[a] == identities[b] ? 1.0 : 0.0; }
};

inline std::size_t batches_per_epoch(std::size_t num_identities, const SamplerConfig& cfg) {
    return (num_identities + cfg.M - 1) / cfg.M;
}

/// Identities for an epoch come from a seeded permutation, consumed M at a time and
/// cycled so every identity appears in each epoch.
inline MiniBatch sample_batch(const EmbeddingCorpus& train, const SamplerConfig& cfg, EpochState state) {
    cfg.validate();
    std::vector<IdentityId> ids = train.identities();
    if (ids.size() < cfg.M) {
        throw ConfigError("corpus has " + std::to_string(ids.size()) + " identities, batch needs M = " +
                          std::to_string(cfg.M));
    }
    std::seed_seq epoch_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                             static_cast<std::uint32_t>(state.epoch), 0x5eedu};
    std::mt19937_64 perm_rng(epoch_seed);
    std::shuffle(ids.begin(), ids.end(), perm_rng);

    std::seed_seq batch_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                             static_cast<std::uint32_t>(state.epoch), static_cast<std::uint32_t>(state.batch),
                             0xba7cu};
    std::mt19937_64 rng(batch_seed);

    MiniBatch b;
    std::vector<std::size_t> first_of_identity;
    for (std::size_t m = 0; m < cfg.M; ++m) {
        const IdentityId id = ids[(state.batch * cfg.M + m) % ids.size()];
        std::vector<std::size_t> pool = train.identity_index().at(id);
        std::vector<std::size_t> chosen;
        if (pool.size() >= cfg.K) {
            std::shuffle(pool.begin(), pool.end(), rng);
            chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.K));
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            for (std::size_t k = 0; k < cfg.K; ++k) {
                chosen.push_back(pool[pick(rng)]);
            }
        }
        first_of_identity.push_back(b.members.size());
        for (std::size_t pos : chosen) {
            b.members.push_back(pos);
            b.item_ids.push_back(train[pos].item_id);
            b.identities.push_back(train[pos].identity_id);
        }
    }
    std::vector<std::size_t> slots(cfg.M);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<bool> is_probe(b.members.size(), false);
    for (std::size_t k = 0; k < cfg.K; ++k) {
        std::uniform_int_distribution<std::size_t> which(0, cfg.K - 1);
        const std::size_t member = first_of_identity[slots[k]] + which(rng);
        b.probes.push_back(member);
        is_probe[member] = true;
    }
    std::sort(b.probes.begin(), b.probes.end());
    for (std::size_t j = 0; j < b.members.size(); ++j) {
        if (!is_probe[j]) {
            b.gallery.push_back(j);
        }
    }
    return b;
}

// --- optimizer -------------------------------------------------------------------

struct OptimizerState {
    ModelParams first_moment;
    ModelParams second_moment;
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState for_params(const ModelParams& m, double lr) {
        OptimizerState s;
        s.first_moment = zeros_like(m);
        s.second_moment = zeros_like(m);
        s.lr = lr;
        return s;
    }
};

/// Bias-corrected Adam on every trainable tensor.
inline void adam_step(OptimizerState& state, ModelParams& params, const ModelParams& grads) {
    std::vector<std::pair<std::string, const Matrix*>> g;
    for_each_tensor(grads, [&](const std::string& name, const Matrix& t, TensorKind kind) {
        if (kind == TensorKind::trainable) {
            if (!t.all_finite()) {
                throw NumericError("non-finite gradient for " + name);
            }
            g.emplace_back(name, &t);
        }
    });
    std::vector<Matrix*> p;
    std::vector<Matrix*> m1;
    std::vector<Matrix*> m2;
    for_each_tensor(params, [&](const std::string&, Matrix& t, TensorKind kind) {
        if (kind == TensorKind::trainable) {
            p.push_back(&t);
        }
    });
    for_each_tensor(state.first_moment, [&](const std::string&, Matrix& t, TensorKind kind) {
        if (kind == TensorKind::trainable) {
            m1.push_back(&t);
        }
    });
    for_each_tensor(state.second_moment, [&](const std::string&, Matrix& t, TensorKind kind) {
        if (kind == TensorKind::trainable) {
            m2.push_back(&t);
        }
    });

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Matrix& gi = *g[i].second;
        if (!gi.same_shape(*p[i])) {
            throw ShapeError("gradient " + g[i].first + " has shape " + gi.shape_string());
        }
        for (std::size_t k = 0; k < gi.size(); ++k) {
            (*m1[i])[k] = state.beta1 * (*m1[i])[k] + (1.0 - state.beta1) * gi[k];
            (*m2[i])[k] = state.beta2 * (*m2[i])[k] + (1.0 - state.beta2) * gi[k] * gi[k];
            const double mhat = (*m1[i])[k] / c1;
            const double vhat = (*m2[i])[k] / c2;
            (*p[i])[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// --- losses ----------------------------------------------------------------------

struct TrainSchedule {
    double stage1_lr = 0.01;
    std::size_t stage1_epochs_before_decay = 20;
    double stage1_decay_factor = 10.0;
    std::size_t stage1_epochs_after = 20;
    double stage2_lr = 1e-4;
    std::size_t stage2_epochs = 20;
    double alpha = 0.9;
    double lambda_gg = 1.0;

    void validate() const {
        if (!(stage1_lr >= 0.0) || !(stage2_lr >= 0.0) || !(stage1_decay_factor > 0.0)) {
            throw ConfigError("learning rates must be non-negative and the decay factor positive");
        }
        if (!(alpha >= 0.0 && alpha <= 1.0)) {
            throw ConfigError("alpha must lie in [0, 1]");
        }
        if (!(lambda_gg >= 0.0)) {
            throw ConfigError("lambda_gg must be non-negative");
        }
    }

    std::size_t stage1_epochs() const noexcept { return stage1_epochs_before_decay + stage1_epochs_after; }

    double stage1_lr_at(std::size_t epoch) const {
        return epoch < stage1_epochs_before_decay ? stage1_lr : stage1_lr / stage1_decay_factor;
    }
};

enum class Stage { base, sggnn };

struct LossValue {
    double total = 0.0;
    double probe_gallery = 0.0;
    double gallery_gallery = 0.0;
    std::size_t pairs = 0;
    std::size_t correct = 0; // probe-gallery pairs classified correctly at 0.5
};

struct LossAndGrads {
    LossValue loss;
    ModelParams grads;
};

/// Builds the batch loss on a tape. Stage::base is summed BCE over all probe-gallery
/// pairs; Stage::sggnn scores refined features through the graph and adds
/// lambda_gg * BCE over all gallery-gallery member pairs. Running statistics are
/// written to `stats` when given.
inline LossAndGrads batch_loss(const ModelParams& params, const EmbeddingCorpus& train, const MiniBatch& batch,
                               Stage stage, const FusionConfig& fusion, double lambda_gg, bool want_grads,
                               ModelParams* stats = nullptr) {
    ad::Tape t;
    const BoundParams p = bind(t, params, want_grads);
    std::vector<EmbeddingItem> members;
    members.reserve(batch.size());
    for (std::size_t pos : batch.members) {
        members.push_back(train[pos]);
    }
    ad::Var e = embed(p, t.constant(raw_matrix(members, params.raw_dim())));

    const std::size_t per_probe = batch.size() - 1;
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    std::vector<double> labels;
    std::vector<std::vector<std::size_t>> galleries;
    for (std::size_t k = 0; k < batch.probes.size(); ++k) {
        galleries.push_back(batch.probe_gallery(k));
        for (std::size_t j : galleries.back()) {
            left.push_back(batch.probes[k]);
            right.push_back(j);
            labels.push_back(batch.pair_label(batch.probes[k], j));
        }
    }
    ad::Var nodes = relation_features(p, ad::gather_rows(e, left), ad::gather_rows(e, right), Mode::train,
                                      stats ? &stats->relation_bn : nullptr);

    LossValue lv;
    lv.pairs = labels.size();
    ad::Var total;
    ad::Var pg_logits;
    if (stage == Stage::base) {
        pg_logits = ad::linear_logits(nodes, p.pg_w, p.pg_b);
        total = ad::bce_with_logits(pg_logits, labels);
        lv.probe_gallery = total.value()[0];
    } else {
        const bool need_gg = fusion.weight_mode == WeightMode::similarity_guided || lambda_gg > 0.0;
        std::optional<ad::Var> gg_full;
        std::optional<ad::Var> gg_loss;
        if (need_gg) {
            std::vector<std::pair<std::size_t, std::size_t>> pairs;
            ad::Var pair_logits;
            gg_full = gallery_pair_logits(p, e, Mode::train, &pairs, &pair_logits);
            if (!pairs.empty() && lambda_gg > 0.0) {
                std::vector<double> gg_labels;
                gg_labels.reserve(pairs.size());
                for (const auto& [a, b] : pairs) {
                    gg_labels.push_back(batch.pair_label(a, b));
                }
                gg_loss = ad::bce_with_logits(pair_logits, std::move(gg_labels));
                lv.gallery_gallery = gg_loss->value()[0];
            }
        }
        std::vector<ad::Var> probe_logits;
        for (std::size_t k = 0; k < batch.probes.size(); ++k) {
            std::vector<std::size_t> rows(per_probe);
            std::iota(rows.begin(), rows.end(), k * per_probe);
            ad::Var probe_nodes = ad::gather_rows(nodes, rows);
            std::optional<ad::Var> gl;
            if (fusion.weight_mode == WeightMode::similarity_guided) {
                gl = ad::gather_block(*gg_full, galleries[k], galleries[k]);
            }
            const GraphVars g = run_graph(p, probe_nodes, gl, fusion, Mode::train, stats ? &stats->message : nullptr);
            probe_logits.push_back(g.logits);
        }
        pg_logits = ad::concat_rows(probe_logits);
        total = ad::bce_with_logits(pg_logits, labels);
        lv.probe_gallery = total.value()[0];
        if (gg_loss) {
            total = ad::lincomb(total, *gg_loss, 1.0, lambda_gg);
        }
    }
    lv.total = total.value()[0];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool positive = pg_logits.value()[i] > 0.0;
        lv.correct += positive == (labels[i] > 0.5) ? 1 : 0;
    }

    LossAndGrads out;
    out.loss = lv;
    if (want_grads) {
        t.backward(total);
        out.grads = collect_gradients(p);
    }
    return out;
}

// --- training loops -----------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0; // 1-based within its stage
    int stage = 1;
    double lr = 0.0;
    double loss = 0.0;     // mean batch loss
    double accuracy = 0.0; // probe-gallery pair accuracy over the epoch
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&, const ModelParams&)>;

namespace detail {

inline EpochLog run_epoch(ModelParams& params, OptimizerState& opt, const EmbeddingCorpus& train,
                          const SamplerConfig& sampler, std::size_t epoch, Stage stage, const FusionConfig& fusion,
                          double lambda_gg) {
    const std::size_t batches = batches_per_epoch(train.identities().size(), sampler);
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
        const MiniBatch batch = sample_batch(train, sampler, {epoch, b});
        ModelParams stats = params;
        LossAndGrads lg = batch_loss(params, train, batch, stage, fusion, lambda_gg, true, &stats);
        if (!std::isfinite(lg.loss.total)) {
            throw NumericError("training diverged: loss is " + std::to_string(lg.loss.total) + " at epoch " +
                               std::to_string(epoch + 1) + ", batch " + std::to_string(b));
        }
        params.relation_bn = stats.relation_bn;
        params.message.bn1 = stats.message.bn1;
        params.message.bn2 = stats.message.bn2;
        adam_step(opt, params, lg.grads);
        loss_sum += lg.loss.total;
        pairs += lg.loss.pairs;
        correct += lg.loss.correct;
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.stage = stage == Stage::base ? 1 : 2;
    log.lr = opt.lr;
    log.loss = loss_sum / static_cast<double>(batches);
    log.accuracy = pairs ? static_cast<double>(correct) / static_cast<double>(pairs) : 0.0;
    return log;
}

} // namespace detail

/// Base-model pretraining: probe-gallery BCE only, lr decayed once by the decay factor.
/// The gallery-gallery classifier is synchronized to the trained probe-gallery classifier.
inline TrainResult stage1_train(ModelParams params, const EmbeddingCorpus& train, const TrainSchedule& schedule,
                                const SamplerConfig& sampler, const EpochCallback& on_epoch = {}) {
    schedule.validate();
    sampler.validate();
    TrainResult result;
    OptimizerState opt = OptimizerState::for_params(params, schedule.stage1_lr);
    for (std::size_t epoch = 0; epoch < schedule.stage1_epochs(); ++epoch) {
        opt.lr = schedule.stage1_lr_at(epoch);
        result.log.push_back(detail::run_epoch(params, opt, train, sampler, epoch, Stage::base, FusionConfig{}, 0.0));
        params.gg_classifier = params.pg_classifier;
        if (on_epoch) {
            on_epoch(result.log.back(), params);
        }
    }
    params.gg_classifier = params.pg_classifier;
    result.params = std::move(params);
    return result;
}

/// End-to-end finetuning through the graph. Epoch indices continue the sampler
/// stream after stage 1 so the two stages see different batches.
inline TrainResult stage2_train(ModelParams params, const EmbeddingCorpus& train, const TrainSchedule& schedule,
                                const SamplerConfig& sampler, FusionConfig fusion, const EpochCallback& on_epoch = {}) {
    schedule.validate();
    sampler.validate();
    fusion.alpha = schedule.alpha;
    fusion.validate();
    params.gg_classifier = params.pg_classifier;
    TrainResult result;
    OptimizerState opt = OptimizerState::for_params(params, schedule.stage2_lr);
    for (std::size_t epoch = 0; epoch < schedule.stage2_epochs; ++epoch) {
        EpochLog log = detail::run_epoch(params, opt, train, sampler, schedule.stage1_epochs() + epoch, Stage::sggnn,
                                         fusion, schedule.lambda_gg);
        log.epoch = epoch + 1;
        result.log.push_back(log);
        if (on_epoch) {
            on_epoch(result.log.back(), params);
        }
    }
    result.params = std::move(params);
    return result;
}

inline std::string format_train_log(const std::vector<EpochLog>& log) {
    std::string out = "epoch,stage,lr,loss\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%.9g,%.9g\n", e.epoch, e.stage, e.lr, e.loss);
        out += buf;
    }
    return out;
}

} // namespace sggnn
