// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sggnn/cli.hpp>
#include <sggnn/sggnn.hpp>

#include "../support/oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>

using namespace sggnn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = d(rng);
    }
    return m;
}

// --- shared benchmark runs ----------------------------------------------------------

struct SeedRun {
    ModelParams stage1;
    ModelParams stage2;
    ModelParams stage2_wo_sg;
    EmbeddingCorpus test;
    ExperimentConfig cfg;
};

class Benchmark {
public:
    explicit Benchmark(std::string config_text) : config_text_(std::move(config_text)) {}

    const SeedRun& run(std::uint64_t seed) {
        auto it = runs_.find(seed);
        if (it != runs_.end()) {
            return it->second;
        }
        SeedRun r;
        apply_config_text(r.cfg, config_text_);
        apply_config_text(r.cfg, "seed = " + std::to_string(seed));
        r.cfg.validate();
        const EmbeddingCorpus corpus = generate_synthetic(r.cfg.synth);
        CorpusSplit split = split_corpus(corpus, r.cfg.train_fraction, r.cfg.split_seed);
        ModelShape shape = r.cfg.model;
        shape.raw_dim = corpus.dim();
        r.stage1 = stage1_train(init_params(shape, r.cfg.init_seed), split.train, r.cfg.schedule, r.cfg.sampler).params;
        FusionConfig sg = r.cfg.fusion;
        sg.weight_mode = WeightMode::similarity_guided;
        r.stage2 = stage2_train(r.stage1, split.train, r.cfg.schedule, r.cfg.sampler, sg).params;
        TrainSchedule no_gg = r.cfg.schedule;
        no_gg.lambda_gg = 0.0;
        FusionConfig compat = r.cfg.fusion;
        compat.weight_mode = WeightMode::compatibility;
        r.stage2_wo_sg = stage2_train(r.stage1, split.train, no_gg, r.cfg.sampler, compat).params;
        r.test = std::move(split.test);
        return runs_.emplace(seed, std::move(r)).first->second;
    }

private:
    std::string config_text_;
    std::map<std::uint64_t, SeedRun> runs_;
};

// --- criteria -------------------------------------------------------------------------

Outcome gradient_check() {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    for (int trial = 0; trial < 4; ++trial) {
        SynthConfig sc;
        sc.num_identities = 3;
        sc.images_per_identity = 2 + static_cast<std::size_t>(trial % 2);
        sc.dim = 3 + static_cast<std::size_t>(rng() % 4);
        sc.seed = rng();
        const EmbeddingCorpus c = generate_synthetic(sc);
        const std::size_t feat = 3 + static_cast<std::size_t>(rng() % 6); // <= 8
        const ModelParams m = init_params({sc.dim, 4 + static_cast<std::size_t>(rng() % 4), feat, 3}, rng());
        const MiniBatch batch = sample_batch(c, {2, 3, rng()}, {0, 0}); // 5 gallery nodes per probe

        auto check = [&](Stage stage, const FusionConfig& f, double lambda, const std::string& tag) {
            const LossAndGrads lg = batch_loss(m, c, batch, stage, f, lambda, true);
            const ModelParams numeric = sggnn::testing::finite_difference_gradients(
                m, [&](const ModelParams& p) { return batch_loss(p, c, batch, stage, f, lambda, false).loss.total; },
                1e-5);
            for (const auto& [name, err] : sggnn::testing::relative_errors(lg.grads, numeric)) {
                ++checks;
                if (err > worst) {
                    worst = err;
                    worst_name = tag + ":" + name;
                }
            }
        };
        check(Stage::base, FusionConfig{}, 0.0, "stage1");
        for (WeightMode mode : {WeightMode::similarity_guided, WeightMode::compatibility}) {
            FusionConfig f;
            f.weight_mode = mode;
            f.alpha = 0.9;
            f.iterations = 1 + static_cast<std::size_t>(trial % 2);
            check(Stage::sggnn, f, mode == WeightMode::similarity_guided ? 1.0 : 0.0, "stage2-" + to_string(mode));
        }
    }
    return {worst < 1e-4, std::to_string(checks) + " tensor checks, max relative error " + fmt("%.3g", worst) +
                              " (" + worst_name + ")"};
}

Outcome edge_weight_contract() {
    std::mt19937_64 rng(7);
    double worst_sum = 0.0;
    double worst_shift = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng() % 16);
        const double scale = std::pow(10.0, static_cast<double>(rng() % 5) - 2.0);
        const Matrix s = random_matrix(n, n, rng, scale);
        const Matrix w = edge_weights_sg(s);
        Matrix shifted = s;
        std::normal_distribution<double> shift(0.0, 50.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double c = shift(rng);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                shifted(i, j) += c;
                ok = ok && w(i, j) >= 0.0 && std::isfinite(w(i, j));
                sum += w(i, j);
            }
            ok = ok && w(i, i) == 0.0;
            if (n >= 2) {
                worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
            }
        }
        worst_shift = std::max(worst_shift, max_abs_diff(edge_weights_sg(shifted), w));
    }
    ok = ok && worst_sum <= 1e-9 && worst_shift <= 1e-9;
    return {ok, "1000 matrices; max |row sum - 1| " + fmt("%.3g", worst_sum) + ", max shift deviation " +
                    fmt("%.3g", worst_shift)};
}

Outcome collapse(Benchmark& bench) {
    const SeedRun& r = bench.run(1);
    bool ok = true;
    std::string detail;
    for (const ModelParams* p : {&r.stage1, &r.stage2}) {
        for (std::size_t shortlist : {r.cfg.shortlist, r.test.size()}) {
            EvalConfig cfg = r.cfg.eval_config();
            cfg.fusion.alpha = 0.0;
            cfg.shortlist = shortlist;
            std::vector<RankingResult> a;
            std::vector<RankingResult> b;
            const Metrics base = evaluate(*p, r.test, Method::base, cfg, nullptr, &a);
            const Metrics sg = evaluate(*p, r.test, Method::sggnn, cfg, nullptr, &b);
            bool same = base == sg && a.size() == b.size();
            for (std::size_t q = 0; same && q < a.size(); ++q) {
                same = a[q].ranked_gallery == b[q].ranked_gallery && a[q].scores == b[q].scores;
            }
            ok = ok && same;
            detail += (detail.empty() ? "" : "; ") + std::string(p == &r.stage1 ? "stage1" : "stage2") +
                      " shortlist " + std::to_string(shortlist) + " mAP " + fmt("%.6f", base.mAP) +
                      (same ? " identical" : " DIFFERS");
        }
    }
    return {ok, detail};
}

Outcome fusion_consistency(Benchmark& bench) {
    std::mt19937_64 rng(11);
    bool bit_equal = true;
    std::size_t worst_steps = 0;
    bool converged = true;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng() % 12);
        const std::size_t d = 2 + static_cast<std::size_t>(rng() % 8);
        MessageNetParams net = init_params({d, 0, d, 0}, rng()).message;
        const Matrix nodes = random_matrix(n, d, rng, 2.0);
        const Matrix w = edge_weights_sg(random_matrix(n, n, rng, 3.0));
        const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        FusionConfig cfg;
        cfg.alpha = alpha;
        cfg.iterations = 1;
        const Matrix t = compute_messages(net, nodes, Mode::eval);
        const Matrix iterative =
            fuse(nodes, t, w, cfg, [&](const Matrix& x) { return compute_messages(net, x, Mode::eval); });
        Matrix direct(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += w(i, j) * t(j, c);
                }
                direct(i, c) = (1.0 - alpha) * nodes(i, c) + alpha * acc;
            }
        }
        bit_equal = bit_equal && iterative == direct;

        // frozen messages, alpha = 0.9
        Matrix cur = nodes;
        bool done = false;
        for (std::size_t k = 1; k <= 200 && !done; ++k) {
            const Matrix next = fuse_step(cur, t, w, 0.9);
            Matrix diff = next;
            for (std::size_t i = 0; i < diff.size(); ++i) {
                diff[i] -= cur[i];
            }
            cur = next;
            if (frobenius_norm(diff) < 1e-8) {
                done = true;
                worst_steps = std::max(worst_steps, k);
            }
        }
        converged = converged && done;
    }
    // The training graph (tape path) agrees with the plain path on a trained model.
    const SeedRun& r = bench.run(1);
    bool graph_equal = true;
    for (std::size_t q = 0; q < 5; ++q) {
        std::vector<EmbeddingItem> gallery(r.test.items().begin() + 10 + static_cast<std::ptrdiff_t>(q) * 20,
                                           r.test.items().begin() + 30 + static_cast<std::ptrdiff_t>(q) * 20);
        FusionConfig cfg = r.cfg.fusion;
        cfg.iterations = 1;
        const SggnnOutput out = sggnn_forward(r.stage2, r.test[q], gallery, cfg);
        MessageNetParams net = r.stage2.message;
        const Matrix t = compute_messages(net, out.graph.node_features, Mode::eval);
        graph_equal = graph_equal && fuse(out.graph.node_features, t, out.graph.edge_weights, cfg) == out.graph.refined;
    }
    return {bit_equal && graph_equal && converged,
            std::string("t=1 iterative vs direct: ") + (bit_equal ? "bit-identical" : "DIFFERENT") +
                "; graph vs plain fusion: " + (graph_equal ? "bit-identical" : "DIFFERENT") +
                "; frozen-message iterates converged within " + std::to_string(worst_steps) + " steps" +
                (converged ? "" : " (some did NOT converge in 200)")};
}

Outcome random_walk_check() {
    std::mt19937_64 rng(13);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng() % 49);
        const Matrix w = edge_weights_sg(random_matrix(n, n, rng, 2.0));
        std::vector<double> s(n);
        std::normal_distribution<double> d(0.0, 3.0);
        for (double& v : s) {
            v = d(rng);
        }
        const auto closed = random_walk_refine(w, s, 0.9);
        const auto iter = sggnn::testing::random_walk_fixed_point(w, s, 0.9);
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst, std::abs(closed[i] - iter[i]));
        }
    }
    return {worst <= 1e-8, "100 shortlists (N <= 50, alpha 0.9), max deviation " + fmt("%.3g", worst)};
}

Outcome metric_oracle() {
    const std::vector<std::string> patterns{
        "+-+",        "+",           "-+",          "--+",         "++",          "+--+",        "-+-+-+",
        "---------+", "----------+", "-----+",      "+-------",    "++++",        "-++-",        "+-+-+-+-+-",
        "--++--++",   "-----------", "+----+----+", "-+++++++++", "---+---+---+", "+---------+", "-+--+---+",
        "++-++-++-",  "----+",       "-----------+--+", "+++-+++-+++"};
    bool ok = patterns.size() == 25;
    MetricAccumulator acc;
    double ap_sum = 0.0;
    std::size_t queries = 0;
    std::size_t hit1 = 0;
    std::size_t hit5 = 0;
    std::size_t hit10 = 0;
    std::size_t skipped = 0;
    for (const auto& p : patterns) {
        std::vector<bool> rel;
        for (char ch : p) {
            rel.push_back(ch == '+');
        }
        ok = ok && average_precision(rel) == sggnn::testing::brute_force_ap(rel);
        acc.add(rel);
        if (!sggnn::testing::brute_force_hit_at(rel, rel.size())) {
            ++skipped;
            continue;
        }
        ap_sum += sggnn::testing::brute_force_ap(rel);
        ++queries;
        hit1 += sggnn::testing::brute_force_hit_at(rel, 1);
        hit5 += sggnn::testing::brute_force_hit_at(rel, 5);
        hit10 += sggnn::testing::brute_force_hit_at(rel, 10);
    }
    const Metrics m = acc.result();
    const double q = static_cast<double>(queries);
    ok = ok && m.mAP == ap_sum / q && m.cmc1 == static_cast<double>(hit1) / q &&
         m.cmc5 == static_cast<double>(hit5) / q && m.cmc10 == static_cast<double>(hit10) / q &&
         m.num_queries == queries && m.skipped == skipped;
    const double anchor = average_precision({true, false, true});
    ok = ok && std::abs(anchor - 5.0 / 6.0) < 1e-15;
    return {ok, "25 patterns; mAP " + fmt("%.6f", m.mAP) + ", CMC@1/5/10 " + fmt("%.4f", m.cmc1) + "/" +
                    fmt("%.4f", m.cmc5) + "/" + fmt("%.4f", m.cmc10) + ", [+,-,+] AP " + fmt("%.6f", anchor)};
}

struct AblationRow {
    std::uint64_t seed = 0;
    double base = 0.0;
    double random_walk = 0.0;
    double sggnn = 0.0;
    double sggnn_wo_sg = 0.0;
    double l2_stage1 = 0.0;
    double l2_stage2 = 0.0;
};

std::vector<AblationRow> ablation_rows(Benchmark& bench, const std::vector<std::uint64_t>& seeds) {
    std::vector<AblationRow> rows;
    for (std::uint64_t s : seeds) {
        const SeedRun& r = bench.run(s);
        const EvalConfig sg = r.cfg.eval_config();
        EvalConfig compat = sg;
        compat.fusion.weight_mode = WeightMode::compatibility;
        AblationRow row;
        row.seed = s;
        const CorpusCache c1(r.stage1, r.test, true);
        const CorpusCache c2(r.stage2, r.test, true);
        row.base = evaluate(r.stage1, r.test, Method::base, sg, &c1).mAP;
        row.random_walk = evaluate(r.stage1, r.test, Method::random_walk, sg, &c1).mAP;
        row.l2_stage1 = evaluate(r.stage1, r.test, Method::l2, sg, &c1).mAP;
        row.sggnn = evaluate(r.stage2, r.test, Method::sggnn, sg, &c2).mAP;
        row.l2_stage2 = evaluate(r.stage2, r.test, Method::l2, sg, &c2).mAP;
        row.sggnn_wo_sg = evaluate(r.stage2_wo_sg, r.test, Method::sggnn_wo_sg, compat).mAP;
        rows.push_back(row);
    }
    return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "    %-6s %8s %8s %8s %8s %8s | %8s %8s\n", "seed", "base", "rw", "sggnn", "wo_sg",
                  "margin", "l2_s1", "l2_s2");
    out += buf;
    AblationRow mean;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "    %-6llu %8.2f %8.2f %8.2f %8.2f %+8.2f | %8.2f %8.2f\n",
                      static_cast<unsigned long long>(r.seed), 100 * r.base, 100 * r.random_walk, 100 * r.sggnn,
                      100 * r.sggnn_wo_sg, 100 * (r.sggnn - r.base), 100 * r.l2_stage1, 100 * r.l2_stage2);
        out += buf;
        mean.base += r.base / static_cast<double>(rows.size());
        mean.random_walk += r.random_walk / static_cast<double>(rows.size());
        mean.sggnn += r.sggnn / static_cast<double>(rows.size());
        mean.sggnn_wo_sg += r.sggnn_wo_sg / static_cast<double>(rows.size());
        mean.l2_stage1 += r.l2_stage1 / static_cast<double>(rows.size());
        mean.l2_stage2 += r.l2_stage2 / static_cast<double>(rows.size());
    }
    std::snprintf(buf, sizeof buf, "    %-6s %8.2f %8.2f %8.2f %8.2f %+8.2f | %8.2f %8.2f\n", "mean", 100 * mean.base,
                  100 * mean.random_walk, 100 * mean.sggnn, 100 * mean.sggnn_wo_sg, 100 * (mean.sggnn - mean.base),
                  100 * mean.l2_stage1, 100 * mean.l2_stage2);
    out += buf;
    return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "seed,base,random_walk,sggnn,sggnn_wo_sg,l2_stage1,l2_stage2\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", static_cast<unsigned long long>(r.seed),
                      r.base, r.random_walk, r.sggnn, r.sggnn_wo_sg, r.l2_stage1, r.l2_stage2);
        out += buf;
    }
    return out;
}

Outcome ablation_ordering(const std::vector<AblationRow>& rows) {
    double base = 0.0;
    double rw = 0.0;
    double sg = 0.0;
    double wo = 0.0;
    std::size_t margin_ok = 0;
    for (const auto& r : rows) {
        base += r.base;
        rw += r.random_walk;
        sg += r.sggnn;
        wo += r.sggnn_wo_sg;
        margin_ok += r.sggnn - r.base >= 0.01 ? 1 : 0;
    }
    const double n = static_cast<double>(rows.size());
    const bool order = base / n <= rw / n && rw / n <= sg / n && wo / n <= sg / n;
    return {order && margin_ok >= 4,
            "mean mAP base " + fmt("%.2f", 100 * base / n) + " <= rw " + fmt("%.2f", 100 * rw / n) + " <= sggnn " +
                fmt("%.2f", 100 * sg / n) + ", wo_sg " + fmt("%.2f", 100 * wo / n) + (order ? "" : " (ORDER VIOLATED)") +
                "; margin >= 1 point in " + std::to_string(margin_ok) + "/" + std::to_string(rows.size()) + " seeds"};
}

Outcome l2_feedback(const std::vector<AblationRow>& rows) {
    std::size_t wins = 0;
    for (const auto& r : rows) {
        wins += r.l2_stage2 >= r.l2_stage1 ? 1 : 0;
    }
    return {wins >= 3, "l2 mAP on stage-2 embeddings >= stage-1 in " + std::to_string(wins) + "/" +
                           std::to_string(rows.size()) + " seeds"};
}

int run_cli(const std::vector<std::string>& args, std::string* captured = nullptr) {
    std::vector<const char*> argv{"sggnn_cli"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (captured) {
        *captured = out.str() + err.str();
    }
    if (code != 0) {
        std::fprintf(stderr, "cli failed (%d): %s\n", code, err.str().c_str());
    }
    return code;
}

Outcome determinism(const std::string& config_text, const fs::path& workdir) {
    std::map<std::string, std::string> first;
    bool ok = true;
    std::size_t compared = 0;
    for (const char* name : {"a", "b"}) {
        const fs::path dir = workdir / "determinism" / name;
        fs::remove_all(dir);
        fs::create_directories(dir);
        const fs::path cfg = dir / "run.cfg";
        write_text_file(cfg, config_text + "\noutput_dir = " + (dir / "out").string() + "\n");
        const std::string corpus = (dir / "corpus.txt").string();
        ok = ok && run_cli({"gen", "--config", cfg.string(), "--corpus", corpus}) == 0;
        ok = ok && run_cli({"train", "--config", cfg.string(), "--corpus", corpus}) == 0;
        ok = ok && run_cli({"eval", "--config", cfg.string(), "--corpus", corpus, "--checkpoint",
                            (dir / "out" / "stage2.ckpt").string(), "--report", (dir / "report.csv").string(),
                            "--dump-graph", (dir / "graph.txt").string()}) == 0;
        if (!ok) {
            return {false, "a CLI step failed"};
        }
        for (const char* file : {"corpus.txt", "corpus.txt.manifest", "out/stage1.ckpt", "out/stage2.ckpt",
                                 "out/train_log.csv", "report.csv", "report.csv.txt", "graph.txt"}) {
            const std::string bytes = read_text_file(dir / file);
            if (first.count(file)) {
                ++compared;
                ok = ok && bytes == first[file];
            } else {
                first[file] = bytes;
            }
        }
    }
    return {ok, std::to_string(compared) + " output files compared across two gen/train/eval runs: " +
                    (ok ? "byte-identical" : "DIFFER")};
}

Outcome sweep(const fs::path& workdir, std::string* table) {
    const fs::path dir = workdir / "determinism" / "a";
    const fs::path report = workdir / "sweep.csv";
    std::string out;
    const int code = run_cli({"sweep", "--config", (dir / "run.cfg").string(), "--corpus", (dir / "corpus.txt").string(),
                              "--checkpoint", "4=" + (dir / "out" / "stage2.ckpt").string(), "--shortlists",
                              "25,50,100", "--alphas", "0.5,0.9,0.95", "--iterations", "1,2", "--report",
                              report.string()},
                             &out);
    *table = out;
    if (code != 0) {
        return {false, "sweep exited with code " + std::to_string(code)};
    }
    std::istringstream csv(read_text_file(report));
    std::string line;
    std::getline(csv, line);
    std::size_t rows = 0;
    bool in_range = true;
    double lo = 1.0;
    double hi = 0.0;
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            f.push_back(cell);
        }
        if (f.size() < 6) {
            in_range = false;
            continue;
        }
        ++rows;
        for (std::size_t i = 4; i <= 5; ++i) {
            const double v = std::stod(f[i]);
            in_range = in_range && v >= 0.0 && v <= 1.0;
        }
        lo = std::min(lo, std::stod(f[4]));
        hi = std::max(hi, std::stod(f[4]));
    }
    return {rows == 18 && in_range, std::to_string(rows) + " rows, all cells in [0,1]: " +
                                        (in_range ? "yes" : "NO") + "; mAP spread across grid " +
                                        fmt("%.2f", 100 * lo) + ".." + fmt("%.2f", 100 * hi)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::string workdir = "acceptance_work";
    std::string config = std::string(SGGNN_SOURCE_DIR) + "/configs/benchmark.cfg";
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    app.add_option("--workdir", workdir, "Scratch directory for CLI runs and reports");
    app.add_option("--config", config, "Benchmark config");
    app.add_option("--seeds", seeds, "Benchmark seeds");
    CLI11_PARSE(app, argc, argv);

    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(workdir);
    const std::string config_text = read_text_file(config);
    Benchmark bench(config_text);

    std::size_t failed = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::printf("criterion %2d: %s  %s  [%s; %.1fs]\n", id, o.pass ? "PASS" : "FAIL", name.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    };

    report(1, "gradient check", gradient_check);
    report(2, "edge-weight contract", edge_weight_contract);
    report(3, "alpha=0 collapse", [&] { return collapse(bench); });
    report(4, "fusion consistency", [&] { return fusion_consistency(bench); });
    report(5, "random-walk closed form", random_walk_check);
    report(6, "metric oracle", metric_oracle);

    std::vector<AblationRow> rows;
    report(7, "ablation ordering", [&] {
        rows = ablation_rows(bench, seeds);
        write_text_file(fs::path(workdir) / "ablation.csv", ablation_csv(rows));
        std::printf("%s", ablation_table(rows).c_str());
        return ablation_ordering(rows);
    });
    report(8, "l2 feature feedback", [&] { return l2_feedback(rows); });
    report(9, "determinism", [&] { return determinism(config_text, workdir); });
    std::string table;
    report(10, "sensitivity sweep", [&] {
        Outcome o = sweep(workdir, &table);
        std::printf("%s", table.c_str());
        return o;
    });

    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("acceptance: %zu/10 passed in %.1fs\n", 10 - failed, total);
    return failed == 0 ? 0 : 1;
}
