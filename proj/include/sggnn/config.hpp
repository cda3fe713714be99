#pragma once

// Flat "key=value" experiment configuration. Blank lines and lines starting
// with '#' are ignored; unknown keys are rejected.

#include <sggnn/corpus.hpp>
#include <sggnn/error.hpp>
#include <sggnn/eval.hpp>
#include <sggnn/graph.hpp>
#include <sggnn/params.hpp>
#include <sggnn/trainer.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace sggnn {

struct ExperimentConfig {
    std::optional<std::filesystem::path> corpus_path;
    SynthConfig synth;
    double train_fraction = 0.5;
    std::uint64_t split_seed = 1;
    ModelShape model{64, 0, 64, 0};
    std::uint64_t init_seed = 3;
    SamplerConfig sampler{4, 8, 2};
    TrainSchedule schedule;
    FusionConfig fusion;
    std::size_t shortlist = 100;
    std::filesystem::path output_dir = "out";
    std::size_t checkpoint_every = 0;

    void validate() const {
        synth.validate();
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
            throw ConfigError("split.train_fraction must lie strictly between 0 and 1");
        }
        if (model.feat_dim == 0) {
            throw ConfigError("model.feat_dim must be positive");
        }
        sampler.validate();
        schedule.validate();
        fusion.validate();
        if (shortlist < 1) {
            throw ConfigError("eval.shortlist must be at least 1");
        }
    }

    EvalConfig eval_config() const { return {fusion, shortlist}; }
};

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& value) {
    T out{};
    if (!parse_number(std::string_view(value), out)) {
        throw ConfigError("invalid value '" + value + "' for key " + key);
    }
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace detail

/// Applies key=value text to cfg. A "seed" key sets every seed not given explicitly
/// in the same text (synth = seed, split = seed+1, sampler = seed+2, init = seed+3).
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text) {
    using detail::parse_value;
    std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
        {"corpus", [&](auto&, auto& v) { cfg.corpus_path = v; }},
        {"synth.num_identities", [&](auto& k, auto& v) { cfg.synth.num_identities = parse_value<std::size_t>(k, v); }},
        {"synth.images_per_identity",
         [&](auto& k, auto& v) { cfg.synth.images_per_identity = parse_value<std::size_t>(k, v); }},
        {"synth.dim", [&](auto& k, auto& v) { cfg.synth.dim = parse_value<std::size_t>(k, v); }},
        {"synth.center_scale", [&](auto& k, auto& v) { cfg.synth.center_scale = parse_value<double>(k, v); }},
        {"synth.noise_sigma", [&](auto& k, auto& v) { cfg.synth.noise_sigma = parse_value<double>(k, v); }},
        {"synth.hard_fraction", [&](auto& k, auto& v) { cfg.synth.hard_fraction = parse_value<double>(k, v); }},
        {"synth.hard_shift", [&](auto& k, auto& v) { cfg.synth.hard_shift = parse_value<double>(k, v); }},
        {"synth.seed", [&](auto& k, auto& v) { cfg.synth.seed = parse_value<std::uint64_t>(k, v); }},
        {"split.train_fraction", [&](auto& k, auto& v) { cfg.train_fraction = parse_value<double>(k, v); }},
        {"split.seed", [&](auto& k, auto& v) { cfg.split_seed = parse_value<std::uint64_t>(k, v); }},
        {"model.feat_dim", [&](auto& k, auto& v) { cfg.model.feat_dim = parse_value<std::size_t>(k, v); }},
        {"model.hidden_dim", [&](auto& k, auto& v) { cfg.model.hidden_dim = parse_value<std::size_t>(k, v); }},
        {"model.proj_dim", [&](auto& k, auto& v) { cfg.model.proj_dim = parse_value<std::size_t>(k, v); }},
        {"model.init_seed", [&](auto& k, auto& v) { cfg.init_seed = parse_value<std::uint64_t>(k, v); }},
        {"sampler.K", [&](auto& k, auto& v) { cfg.sampler.K = parse_value<std::size_t>(k, v); }},
        {"sampler.M", [&](auto& k, auto& v) { cfg.sampler.M = parse_value<std::size_t>(k, v); }},
        {"sampler.seed", [&](auto& k, auto& v) { cfg.sampler.seed = parse_value<std::uint64_t>(k, v); }},
        {"stage1.lr", [&](auto& k, auto& v) { cfg.schedule.stage1_lr = parse_value<double>(k, v); }},
        {"stage1.epochs_before_decay",
         [&](auto& k, auto& v) { cfg.schedule.stage1_epochs_before_decay = parse_value<std::size_t>(k, v); }},
        {"stage1.decay_factor", [&](auto& k, auto& v) { cfg.schedule.stage1_decay_factor = parse_value<double>(k, v); }},
        {"stage1.epochs_after",
         [&](auto& k, auto& v) { cfg.schedule.stage1_epochs_after = parse_value<std::size_t>(k, v); }},
        {"stage2.lr", [&](auto& k, auto& v) { cfg.schedule.stage2_lr = parse_value<double>(k, v); }},
        {"stage2.epochs", [&](auto& k, auto& v) { cfg.schedule.stage2_epochs = parse_value<std::size_t>(k, v); }},
        {"stage2.lambda_gg", [&](auto& k, auto& v) { cfg.schedule.lambda_gg = parse_value<double>(k, v); }},
        {"fusion.alpha",
         [&](auto& k, auto& v) { cfg.fusion.alpha = cfg.schedule.alpha = parse_value<double>(k, v); }},
        {"fusion.iterations", [&](auto& k, auto& v) { cfg.fusion.iterations = parse_value<std::size_t>(k, v); }},
        {"fusion.weight_mode", [&](auto&, auto& v) { cfg.fusion.weight_mode = parse_weight_mode(v); }},
        {"eval.shortlist", [&](auto& k, auto& v) { cfg.shortlist = parse_value<std::size_t>(k, v); }},
        {"output_dir", [&](auto&, auto& v) { cfg.output_dir = v; }},
        {"checkpoint_every", [&](auto& k, auto& v) { cfg.checkpoint_every = parse_value<std::size_t>(k, v); }},
    };

    std::optional<std::uint64_t> master_seed;
    std::set<std::string> given;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string line = detail::trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = detail::trim(std::string_view(line).substr(0, eq));
        const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
        if (key == "seed") {
            master_seed = detail::parse_value<std::uint64_t>(key, value);
            continue;
        }
        auto it = setters.find(key);
        if (it == setters.end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
        it->second(key, value);
        given.insert(key);
    }
    if (master_seed) {
        const std::uint64_t s = *master_seed;
        if (!given.count("synth.seed")) {
            cfg.synth.seed = s;
        }
        if (!given.count("split.seed")) {
            cfg.split_seed = s + 1;
        }
        if (!given.count("sampler.seed")) {
            cfg.sampler.seed = s + 2;
        }
        if (!given.count("model.init_seed")) {
            cfg.init_seed = s + 3;
        }
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    ExperimentConfig cfg;
    apply_config_text(cfg, read_text_file(path));
    return cfg;
}

/// Canonical text form of a synthetic-corpus configuration.
inline std::string canonical_synth_config(const SynthConfig& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "num_identities=%zu\nimages_per_identity=%zu\ndim=%zu\ncenter_scale=%.17g\nnoise_sigma=%.17g\n"
                  "hard_fraction=%.17g\nhard_shift=%.17g\nseed=%llu\n",
                  s.num_identities, s.images_per_identity, s.dim, s.center_scale, s.noise_sigma, s.hard_fraction,
                  s.hard_shift, static_cast<unsigned long long>(s.seed));
    return buf;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string synth_config_hash(const SynthConfig& s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_synth_config(s))));
    return buf;
}

} // namespace sggnn
