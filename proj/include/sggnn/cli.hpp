#pragma once

// Subcommands gen / train / eval / sweep. `run` is the process entry point and
// maps error categories to exit codes: 0 success, 1 usage, 2 data, 3 numeric.

#include <sggnn/config.hpp>
#include <sggnn/corpus.hpp>
#include <sggnn/eval.hpp>
#include <sggnn/params.hpp>
#include <sggnn/trainer.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sggnn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Usage errors raised by the command layer (bad flag values, unknown methods).
class UsageError : public Error {
public:
    using Error::Error;
};

struct CommonOptions {
    std::string config;
    std::string corpus;
    std::optional<std::uint64_t> seed;
};

inline ExperimentConfig resolve_config(const CommonOptions& opts) {
    ExperimentConfig cfg;
    if (!opts.config.empty()) {
        cfg = load_config(opts.config);
    }
    if (opts.seed) {
        apply_config_text(cfg, "seed=" + std::to_string(*opts.seed));
    }
    if (!opts.corpus.empty()) {
        cfg.corpus_path = opts.corpus;
    }
    cfg.validate();
    return cfg;
}

/// The corpus file when configured, otherwise the synthetic corpus.
inline EmbeddingCorpus obtain_corpus(const ExperimentConfig& cfg) {
    if (cfg.corpus_path) {
        return load_corpus(*cfg.corpus_path);
    }
    return generate_synthetic(cfg.synth);
}

inline std::string corpus_name(const ExperimentConfig& cfg) {
    return cfg.corpus_path ? cfg.corpus_path->stem().string() : std::string("synthetic");
}

inline ModelShape model_shape(const ExperimentConfig& cfg, std::size_t raw_dim) {
    ModelShape s = cfg.model;
    s.raw_dim = raw_dim;
    return s;
}

inline std::string manifest_text(const SynthConfig& s, const EmbeddingCorpus& corpus) {
    return "seed=" + std::to_string(s.seed) + "\nconfig_hash=" + synth_config_hash(s) +
           "\nitems=" + std::to_string(corpus.size()) + "\ndim=" + std::to_string(corpus.dim()) + "\n";
}

// --- commands -------------------------------------------------------------------

/// Writes the synthetic corpus and "<corpus>.manifest" (seed, config hash).
inline std::filesystem::path cmd_gen(const ExperimentConfig& cfg, const std::filesystem::path& out_path,
                                     std::ostream& out) {
    const EmbeddingCorpus corpus = generate_synthetic(cfg.synth);
    if (out_path.has_parent_path()) {
        std::filesystem::create_directories(out_path.parent_path());
    }
    save_corpus(corpus, out_path);
    write_text_file(out_path.string() + ".manifest", manifest_text(cfg.synth, corpus));
    out << "wrote " << corpus.size() << " items (dim " << corpus.dim() << ") to " << out_path.string() << "\n";
    return out_path;
}

struct TrainOutputs {
    std::filesystem::path stage1_checkpoint;
    std::optional<std::filesystem::path> stage2_checkpoint;
    std::filesystem::path log;
    std::size_t epochs = 0;
};

enum class StageSelection { both, stage1_only, stage2_only };

/// Stage 1 then stage 2 on the train split; checkpoints and "train_log.csv" land in output_dir.
inline TrainOutputs cmd_train(const ExperimentConfig& cfg, StageSelection stages,
                              const std::optional<std::filesystem::path>& init_checkpoint, std::ostream& out) {
    const EmbeddingCorpus corpus = obtain_corpus(cfg);
    const CorpusSplit split = split_corpus(corpus, cfg.train_fraction, cfg.split_seed);
    std::filesystem::create_directories(cfg.output_dir);
    TrainOutputs res;
    res.stage1_checkpoint = cfg.output_dir / "stage1.ckpt";
    res.log = cfg.output_dir / "train_log.csv";

    auto periodic = [&](int stage) {
        return [&, stage](const EpochLog& e, const ModelParams& p) {
            out << "stage " << stage << " epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " acc "
                << e.accuracy << "\n";
            if (cfg.checkpoint_every && e.epoch % cfg.checkpoint_every == 0) {
                save_checkpoint(p, cfg.output_dir /
                                       ("stage" + std::to_string(stage) + "_epoch" + std::to_string(e.epoch) + ".ckpt"));
            }
        };
    };

    std::vector<EpochLog> log;
    ModelParams params;
    if (stages == StageSelection::stage2_only) {
        if (!init_checkpoint) {
            throw UsageError("--stage 2 needs --checkpoint with stage-1 parameters");
        }
        params = load_checkpoint(*init_checkpoint);
    } else {
        params = init_params(model_shape(cfg, corpus.dim()), cfg.init_seed);
        TrainResult s1 = stage1_train(std::move(params), split.train, cfg.schedule, cfg.sampler, periodic(1));
        params = std::move(s1.params);
        log = s1.log;
        save_checkpoint(params, res.stage1_checkpoint);
    }
    if (stages != StageSelection::stage1_only) {
        TrainResult s2 = stage2_train(std::move(params), split.train, cfg.schedule, cfg.sampler, cfg.fusion, periodic(2));
        params = std::move(s2.params);
        log.insert(log.end(), s2.log.begin(), s2.log.end());
        res.stage2_checkpoint = cfg.output_dir / "stage2.ckpt";
        save_checkpoint(params, *res.stage2_checkpoint);
    }
    write_text_file(res.log, format_train_log(log));
    res.epochs = log.size();
    return res;
}

inline std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> methods;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = detail::trim(tok);
        if (tok.empty()) {
            continue;
        }
        auto m = parse_method(tok);
        if (!m) {
            std::string valid;
            for (Method v : kAllMethods) {
                valid += (valid.empty() ? "" : ", ") + to_string(v);
            }
            throw UsageError("unknown method '" + tok + "'; valid methods: " + valid);
        }
        methods.push_back(*m);
    }
    if (methods.empty()) {
        throw UsageError("--methods is empty");
    }
    return methods;
}

/// Evaluates each method on the test split with one checkpoint.
inline std::vector<MethodReport> cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                          const std::vector<Method>& methods,
                                          const std::optional<std::filesystem::path>& report,
                                          const std::optional<std::filesystem::path>& dump_graph, std::ostream& out) {
    const ModelParams params = load_checkpoint(checkpoint);
    const EmbeddingCorpus corpus = obtain_corpus(cfg);
    if (corpus.dim() != params.raw_dim()) {
        throw ShapeError("checkpoint expects raw dimension " + std::to_string(params.raw_dim()) + ", corpus has " +
                         std::to_string(corpus.dim()));
    }
    const CorpusSplit split = split_corpus(corpus, cfg.train_fraction, cfg.split_seed);
    const CorpusCache cache(params, split.test, true);
    std::vector<MethodReport> rows;
    for (Method m : methods) {
        rows.push_back({to_string(m), evaluate(params, split.test, m, cfg.eval_config(), &cache)});
    }
    const std::string table = format_metrics_table(rows);
    out << table;
    if (report) {
        if (report->has_parent_path()) {
            std::filesystem::create_directories(report->parent_path());
        }
        write_text_file(*report, format_metrics_csv(rows));
        write_text_file(report->string() + ".txt", table);
    }
    if (dump_graph) {
        const std::size_t q = 0;
        RankContext c;
        c.probe = split.test[q].item_id;
        c.probe_embed.assign(cache.embeddings().row(q).begin(), cache.embeddings().row(q).end());
        std::vector<std::size_t> gallery;
        for (std::size_t j = 1; j < split.test.size(); ++j) {
            gallery.push_back(j);
            c.gallery_ids.push_back(split.test[j].item_id);
            c.gallery_identities.push_back(split.test[j].identity_id);
        }
        c.gallery_embed = select_rows(cache.embeddings(), gallery);
        const Matrix block = select_block(cache.pair_logits(), gallery, gallery);
        c.gallery_logits = &block;
        BatchGraph g;
        EvalConfig ec = cfg.eval_config();
        rank_with(params, c, ec.fusion.weight_mode == WeightMode::similarity_guided ? Method::sggnn
                                                                                    : Method::sggnn_wo_sg,
                  ec, &g);
        write_text_file(*dump_graph, format_batch_graph(g));
    }
    return rows;
}

/// "K=path" or a bare path (taken as the configured K).
inline std::map<std::size_t, std::filesystem::path> parse_checkpoint_specs(const std::vector<std::string>& specs,
                                                                           std::size_t default_k) {
    std::map<std::size_t, std::filesystem::path> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            out[default_k] = s;
            continue;
        }
        std::size_t k = 0;
        if (!detail::parse_number(std::string_view(s).substr(0, eq), k)) {
            throw UsageError("bad checkpoint spec '" + s + "', expected K=path");
        }
        out[k] = s.substr(eq + 1);
    }
    return out;
}

/// "top:K:alpha:t;top:K:alpha:t"
inline std::vector<SweepPoint> parse_grid(const std::string& text) {
    std::vector<SweepPoint> grid;
    std::stringstream ss(text);
    std::string row;
    while (std::getline(ss, row, ';')) {
        row = detail::trim(row);
        if (row.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream rs(row);
        std::string part;
        while (std::getline(rs, part, ':')) {
            f.push_back(detail::trim(part));
        }
        SweepPoint p;
        if (f.size() != 4 || !detail::parse_number(std::string_view(f[0]), p.shortlist) ||
            !detail::parse_number(std::string_view(f[1]), p.K) || !detail::parse_number(std::string_view(f[2]), p.alpha) ||
            !detail::parse_number(std::string_view(f[3]), p.iterations)) {
            throw UsageError("bad grid row '" + row + "', expected top:K:alpha:t");
        }
        grid.push_back(p);
    }
    return grid;
}

struct SweepOutcome {
    std::vector<SweepRow> rows;
    bool any_error = false;
};

inline SweepOutcome cmd_sweep(const ExperimentConfig& cfg, const std::map<std::size_t, std::filesystem::path>& checkpoints,
                              const std::vector<SweepPoint>& grid, const std::optional<std::filesystem::path>& report,
                              std::ostream& out) {
    std::map<std::size_t, ModelParams> params_by_k;
    for (const auto& [k, path] : checkpoints) {
        if (std::filesystem::exists(path)) {
            params_by_k.emplace(k, load_checkpoint(path));
        }
    }
    const EmbeddingCorpus corpus = obtain_corpus(cfg);
    const CorpusSplit split = split_corpus(corpus, cfg.train_fraction, cfg.split_seed);
    SweepOutcome res;
    res.rows = sensitivity_sweep(params_by_k, split.test, grid, cfg.fusion.weight_mode);
    for (const auto& r : res.rows) {
        res.any_error = res.any_error || !r.metrics;
    }
    const std::string name = corpus_name(cfg);
    out << format_sweep_table(res.rows, name);
    if (report) {
        if (report->has_parent_path()) {
            std::filesystem::create_directories(report->parent_path());
        }
        write_text_file(*report, format_sweep_csv(res.rows, name));
        write_text_file(report->string() + ".txt", format_sweep_table(res.rows, name));
    }
    return res;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        T v{};
        if (!detail::parse_number(std::string_view(detail::trim(tok)), v)) {
            throw UsageError(std::string("bad value '") + tok + "' for " + flag);
        }
        out.push_back(v);
    }
    return out;
}

// --- entry point ---------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Similarity-guided graph neural network re-ranking: data generation, training and evaluation"};
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Experiment config file (key=value)");
        sub->add_option("--corpus", common.corpus, "Corpus file");
        sub->add_option("--seed", common.seed, "Master seed for every unset seed");
    };

    std::string synth_config;
    auto* gen = app.add_subcommand("gen", "Write a synthetic corpus and its manifest");
    add_common(gen);
    gen->add_option("--synth-config", synth_config, "Synthetic corpus config (synth.* keys)");

    std::string stage = "all";
    std::size_t checkpoint_every = 0;
    std::string checkpoint;
    auto* train = app.add_subcommand("train", "Stage-1 pretraining then stage-2 graph finetuning");
    add_common(train);
    train->add_option("--stage", stage, "all | 1 | 1-only | 2")->check(CLI::IsMember({"all", "1", "1-only", "2"}));
    train->add_option("--checkpoint-every", checkpoint_every, "Write a checkpoint every E epochs");
    train->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint to finetune (with --stage 2)");

    std::string methods = "base,l2,random_walk,sggnn,sggnn_wo_sg";
    std::string report;
    std::string dump_graph;
    auto* eval = app.add_subcommand("eval", "Evaluate ranking methods on the test split");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
    eval->add_option("--methods", methods, "Comma-separated: base,l2,sggnn,sggnn_wo_sg,random_walk");
    eval->add_option("--report", report, "CSV report path (a .txt table is written alongside)");
    eval->add_option("--dump-graph", dump_graph, "Write the first probe's graph to this path");

    std::vector<std::string> sweep_checkpoints;
    std::string grid_text;
    std::string shortlists;
    std::string ks;
    std::string alphas;
    std::string iterations;
    auto* sweep = app.add_subcommand("sweep", "Sensitivity table over shortlist size, K, alpha and iterations");
    add_common(sweep);
    sweep->add_option("--checkpoint", sweep_checkpoints, "K=path (repeatable); a bare path means the config's K");
    sweep->add_option("--grid", grid_text, "Rows top:K:alpha:t separated by ';' (default: the nine-row table)");
    sweep->add_option("--shortlists", shortlists, "Cross-product grid: shortlist sizes");
    sweep->add_option("--Ks", ks, "Cross-product grid: K values");
    sweep->add_option("--alphas", alphas, "Cross-product grid: alpha values");
    sweep->add_option("--iterations", iterations, "Cross-product grid: iteration counts");
    sweep->add_option("--report", report, "CSV report path (a .txt table is written alongside)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        ExperimentConfig cfg = resolve_config(common);
        if (*gen) {
            if (!synth_config.empty()) {
                apply_config_text(cfg, read_text_file(synth_config));
                if (common.seed) {
                    cfg.synth.seed = *common.seed;
                }
                cfg.validate();
            }
            const std::filesystem::path path =
                common.corpus.empty() ? cfg.output_dir / "corpus.txt" : std::filesystem::path(common.corpus);
            cfg.corpus_path.reset();
            cmd_gen(cfg, path, out);
        } else if (*train) {
            cfg.checkpoint_every = checkpoint_every ? checkpoint_every : cfg.checkpoint_every;
            const StageSelection sel = stage == "2"                        ? StageSelection::stage2_only
                                       : (stage == "1" || stage == "1-only") ? StageSelection::stage1_only
                                                                            : StageSelection::both;
            std::optional<std::filesystem::path> init;
            if (!checkpoint.empty()) {
                init = checkpoint;
            }
            const TrainOutputs res = cmd_train(cfg, sel, init, out);
            out << "trained " << res.epochs << " epochs; log " << res.log.string() << "\n";
        } else if (*eval) {
            const auto ms = parse_methods(methods);
            std::optional<std::filesystem::path> rep;
            std::optional<std::filesystem::path> dump;
            if (!report.empty()) {
                rep = report;
            }
            if (!dump_graph.empty()) {
                dump = dump_graph;
            }
            cmd_eval(cfg, checkpoint, ms, rep, dump, out);
        } else if (*sweep) {
            std::vector<SweepPoint> grid;
            if (!grid_text.empty()) {
                grid = parse_grid(grid_text);
            } else if (!shortlists.empty() || !ks.empty() || !alphas.empty() || !iterations.empty()) {
                grid = cross_grid(shortlists.empty() ? std::vector<std::size_t>{cfg.shortlist}
                                                     : parse_list<std::size_t>(shortlists, "--shortlists"),
                                  ks.empty() ? std::vector<std::size_t>{cfg.sampler.K} : parse_list<std::size_t>(ks, "--Ks"),
                                  alphas.empty() ? std::vector<double>{cfg.fusion.alpha}
                                                 : parse_list<double>(alphas, "--alphas"),
                                  iterations.empty() ? std::vector<std::size_t>{cfg.fusion.iterations}
                                                     : parse_list<std::size_t>(iterations, "--iterations"));
            } else {
                grid = default_sweep_grid();
            }
            if (sweep_checkpoints.empty()) {
                throw UsageError("sweep needs at least one --checkpoint");
            }
            std::optional<std::filesystem::path> rep;
            if (!report.empty()) {
                rep = report;
            }
            const SweepOutcome res =
                cmd_sweep(cfg, parse_checkpoint_specs(sweep_checkpoints, cfg.sampler.K), grid, rep, out);
            if (res.any_error) {
                err << "sweep: some rows have no checkpoint\n";
                return kData;
            }
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        err << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}

} // namespace sggnn::cli
