#pragma once

#include <sggnn/corpus.hpp>
#include <sggnn/error.hpp>
#include <sggnn/matrix.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace sggnn {

/// Affine -> ReLU -> affine, mapping D_raw to D_feat.
struct EmbedHeadParams {
    Matrix w1; // D_raw x H
    Matrix b1; // 1 x H
    Matrix w2; // H x D_feat
    Matrix b2; // 1 x D_feat
};

struct BatchNormParams {
    Matrix gamma;        // 1 x D
    Matrix beta;         // 1 x D
    Matrix running_mean; // 1 x D
    Matrix running_var;  // 1 x D
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormParams identity(std::size_t d) {
        return {Matrix(1, d, 1.0), Matrix(1, d, 0.0), Matrix(1, d, 0.0), Matrix(1, d, 1.0)};
    }

    /// running <- (1 - momentum) * running + momentum * batch; the variance uses the unbiased estimate.
    void update_running(std::span<const double> batch_mean, std::span<const double> batch_var, std::size_t n) {
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        for (std::size_t c = 0; c < running_mean.size(); ++c) {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * batch_mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * batch_var[c] * unbias;
        }
    }
};

/// Linear classifier w . d + b followed by a sigmoid.
struct ClassifierParams {
    Matrix w; // D x 1
    Matrix b; // 1 x 1
};

/// Two (affine -> BN -> ReLU) layers, D_feat -> D_feat.
struct MessageNetParams {
    Matrix w1;
    Matrix b1;
    BatchNormParams bn1;
    Matrix w2;
    Matrix b2;
    BatchNormParams bn2;
};

/// Learned projection for the unsupervised compatibility weights.
struct CompatParams {
    Matrix proj; // D_feat x D_proj
};

struct ModelParams {
    EmbedHeadParams embed;
    BatchNormParams relation_bn;
    ClassifierParams pg_classifier;
    ClassifierParams gg_classifier;
    MessageNetParams message;
    CompatParams compat;

    std::size_t raw_dim() const noexcept { return embed.w1.rows(); }
    std::size_t feat_dim() const noexcept { return embed.w2.cols(); }
};

struct ModelShape {
    std::size_t raw_dim = 64;
    std::size_t hidden_dim = 0; // 0 -> raw_dim
    std::size_t feat_dim = 64;
    std::size_t proj_dim = 0; // 0 -> feat_dim
};

namespace detail {

inline Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = normal(rng);
    }
    return m;
}

} // namespace detail

/// Randomly initialized parameters (He-scaled Gaussians, zero biases, identity BN).
/// The gallery-gallery classifier starts as a copy of the probe-gallery one.
inline ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
    const std::size_t h = shape.hidden_dim ? shape.hidden_dim : shape.raw_dim;
    const std::size_t d = shape.feat_dim;
    const std::size_t p = shape.proj_dim ? shape.proj_dim : d;
    if (shape.raw_dim == 0 || h == 0 || d == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    ModelParams m;
    m.embed.w1 = detail::gaussian(shape.raw_dim, h, std::sqrt(2.0 / static_cast<double>(shape.raw_dim)), rng);
    m.embed.b1 = Matrix(1, h);
    m.embed.w2 = detail::gaussian(h, d, std::sqrt(1.0 / static_cast<double>(h)), rng);
    m.embed.b2 = Matrix(1, d);
    m.relation_bn = BatchNormParams::identity(d);
    m.pg_classifier.w = detail::gaussian(d, 1, std::sqrt(1.0 / static_cast<double>(d)), rng);
    m.pg_classifier.b = Matrix(1, 1);
    m.gg_classifier = m.pg_classifier;
    m.message.w1 = detail::gaussian(d, d, std::sqrt(2.0 / static_cast<double>(d)), rng);
    m.message.b1 = Matrix(1, d);
    m.message.bn1 = BatchNormParams::identity(d);
    m.message.w2 = detail::gaussian(d, d, std::sqrt(2.0 / static_cast<double>(d)), rng);
    m.message.b2 = Matrix(1, d);
    m.message.bn2 = BatchNormParams::identity(d);
    m.compat.proj = detail::gaussian(d, p, std::sqrt(1.0 / static_cast<double>(d)), rng);
    return m;
}

enum class TensorKind { trainable, statistic };

/// Visits every tensor in a fixed order with its checkpoint name.
template <typename Params, typename Fn>
    requires std::is_same_v<std::remove_const_t<Params>, ModelParams>
void for_each_tensor(Params& m, Fn&& fn) {
    auto bn = [&](const std::string& prefix, auto& b) {
        fn(prefix + ".gamma", b.gamma, TensorKind::trainable);
        fn(prefix + ".beta", b.beta, TensorKind::trainable);
        fn(prefix + ".running_mean", b.running_mean, TensorKind::statistic);
        fn(prefix + ".running_var", b.running_var, TensorKind::statistic);
    };
    fn("embed.w1", m.embed.w1, TensorKind::trainable);
    fn("embed.b1", m.embed.b1, TensorKind::trainable);
    fn("embed.w2", m.embed.w2, TensorKind::trainable);
    fn("embed.b2", m.embed.b2, TensorKind::trainable);
    bn("relation_bn", m.relation_bn);
    fn("pg_classifier.w", m.pg_classifier.w, TensorKind::trainable);
    fn("pg_classifier.b", m.pg_classifier.b, TensorKind::trainable);
    fn("gg_classifier.w", m.gg_classifier.w, TensorKind::trainable);
    fn("gg_classifier.b", m.gg_classifier.b, TensorKind::trainable);
    fn("message.w1", m.message.w1, TensorKind::trainable);
    fn("message.b1", m.message.b1, TensorKind::trainable);
    bn("message.bn1", m.message.bn1);
    fn("message.w2", m.message.w2, TensorKind::trainable);
    fn("message.b2", m.message.b2, TensorKind::trainable);
    bn("message.bn2", m.message.bn2);
    fn("compat.proj", m.compat.proj, TensorKind::trainable);
}

/// Same-shaped zero tensors, used as a gradient container.
inline ModelParams zeros_like(const ModelParams& m) {
    ModelParams z = m;
    for_each_tensor(z, [](const std::string&, Matrix& t, TensorKind) { t.fill(0.0); });
    return z;
}

inline bool operator==(const ModelParams& a, const ModelParams& b) {
    std::vector<const Matrix*> ta;
    std::vector<const Matrix*> tb;
    for_each_tensor(a, [&](const std::string&, const Matrix& t, TensorKind) { ta.push_back(&t); });
    for_each_tensor(b, [&](const std::string&, const Matrix& t, TensorKind) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (!(*ta[i] == *tb[i])) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Checkpoint format ("SGGNN-CKPT v1"):
//
//   SGGNN-CKPT v1\n
//   tensors <count>\n
//   then per tensor, in for_each_tensor order:
//     <name> <rows> <cols>\n
//     rows*cols IEEE-754 binary64 values, little-endian, row-major
//     \n
//   end\n
//
// BatchNorm momentum/eps are stored as 1x2 tensors "<prefix>.hyper".
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "SGGNN-CKPT v1";

namespace detail {

inline void append_f64_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xffu));
        bits >>= 8;
    }
}

inline double read_f64_le(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    }
    return std::bit_cast<double>(bits);
}

inline std::vector<std::pair<std::string, Matrix>> checkpoint_tensors(const ModelParams& m) {
    std::vector<std::pair<std::string, Matrix>> out;
    for_each_tensor(m, [&](const std::string& name, const Matrix& t, TensorKind) { out.emplace_back(name, t); });
    auto hyper = [&](const std::string& prefix, const BatchNormParams& b) {
        out.emplace_back(prefix + ".hyper", Matrix{{b.momentum, b.eps}});
    };
    hyper("relation_bn", m.relation_bn);
    hyper("message.bn1", m.message.bn1);
    hyper("message.bn2", m.message.bn2);
    return out;
}

} // namespace detail

inline std::string serialize_checkpoint(const ModelParams& m) {
    const auto tensors = detail::checkpoint_tensors(m);
    std::string out(kCheckpointMagic);
    out += "\ntensors " + std::to_string(tensors.size()) + "\n";
    for (const auto& [name, t] : tensors) {
        out += name + " " + std::to_string(t.rows()) + " " + std::to_string(t.cols()) + "\n";
        for (double v : t.values()) {
            detail::append_f64_le(out, v);
        }
        out += "\n";
    }
    out += "end\n";
    return out;
}

inline ModelParams deserialize_checkpoint(std::string_view bytes) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto read_line = [&]() {
        const std::size_t end = bytes.find('\n', pos);
        if (end == std::string_view::npos) {
            throw ParseError("checkpoint truncated", line_no + 1);
        }
        std::string_view line = bytes.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        return line;
    };
    if (read_line() != kCheckpointMagic) {
        throw ParseError("not an SGGNN-CKPT v1 file", 1);
    }
    const auto count_toks = detail::split_ws(read_line());
    std::size_t count = 0;
    if (count_toks.size() != 2 || count_toks[0] != "tensors" || !detail::parse_number(count_toks[1], count)) {
        throw ParseError("malformed tensor count", line_no);
    }

    std::map<std::string, Matrix, std::less<>> loaded;
    for (std::size_t i = 0; i < count; ++i) {
        const auto toks = detail::split_ws(read_line());
        std::size_t rows = 0;
        std::size_t cols = 0;
        if (toks.size() != 3 || !detail::parse_number(toks[1], rows) || !detail::parse_number(toks[2], cols)) {
            throw ParseError("malformed tensor header", line_no);
        }
        const std::size_t nbytes = rows * cols * 8;
        if (pos + nbytes + 1 > bytes.size() || bytes[pos + nbytes] != '\n') {
            throw ParseError("tensor payload truncated for " + std::string(toks[0]), line_no);
        }
        Matrix t(rows, cols);
        for (std::size_t k = 0; k < rows * cols; ++k) {
            t[k] = detail::read_f64_le(bytes.data() + pos + 8 * k);
        }
        pos += nbytes + 1;
        loaded.emplace(std::string(toks[0]), std::move(t));
    }
    if (read_line() != "end") {
        throw ParseError("missing end marker", line_no);
    }

    ModelParams m;
    auto take = [&](const std::string& name, Matrix& dst) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw ParseError("checkpoint lacks tensor " + name, 0);
        }
        dst = std::move(it->second);
    };
    for_each_tensor(m, [&](const std::string& name, Matrix& t, TensorKind) { take(name, t); });
    auto hyper = [&](const std::string& prefix, BatchNormParams& b) {
        Matrix h;
        take(prefix + ".hyper", h);
        if (h.size() != 2) {
            throw ParseError(prefix + ".hyper must hold 2 values", 0);
        }
        b.momentum = h[0];
        b.eps = h[1];
    };
    hyper("relation_bn", m.relation_bn);
    hyper("message.bn1", m.message.bn1);
    hyper("message.bn2", m.message.bn2);

    // Shape consistency.
    const std::size_t d = m.feat_dim();
    if (m.embed.w1.cols() != m.embed.w2.rows() || m.relation_bn.gamma.size() != d || m.pg_classifier.w.rows() != d ||
        m.gg_classifier.w.rows() != d || m.message.w1.rows() != d || m.message.w2.cols() != d ||
        m.compat.proj.rows() != d) {
        throw ParseError("checkpoint tensor shapes are inconsistent", 0);
    }
    return m;
}

inline void save_checkpoint(const ModelParams& m, const std::filesystem::path& path) {
    write_text_file(path, serialize_checkpoint(m));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_text_file(path));
}

} // namespace sggnn
