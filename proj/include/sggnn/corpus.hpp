#pragma once

#include <sggnn/error.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sggnn {

using ItemId = std::int64_t;
using IdentityId = std::int64_t;

struct EmbeddingItem {
    ItemId item_id = 0;
    IdentityId identity_id = 0;
    std::int64_t camera_id = 0;
    std::vector<double> raw;

    friend bool operator==(const EmbeddingItem&, const EmbeddingItem&) = default;
};

/// Immutable collection of items sharing one raw dimension.
class EmbeddingCorpus {
public:
    EmbeddingCorpus() = default;

    EmbeddingCorpus(std::size_t dim, std::vector<EmbeddingItem> items) : dim_(dim), items_(std::move(items)) {
        std::unordered_set<ItemId> seen;
        for (std::size_t i = 0; i < items_.size(); ++i) {
            const auto& it = items_[i];
            if (it.raw.size() != dim_) {
                throw ShapeError("corpus: item " + std::to_string(it.item_id) + " has dimension " +
                                 std::to_string(it.raw.size()) + ", expected " + std::to_string(dim_));
            }
            if (it.item_id < 0 || it.identity_id < 0 || it.camera_id < 0) {
                throw ConfigError("corpus: negative id on item " + std::to_string(it.item_id));
            }
            if (!std::all_of(it.raw.begin(), it.raw.end(), [](double v) { return std::isfinite(v); })) {
                throw NumericError("corpus: non-finite feature on item " + std::to_string(it.item_id));
            }
            if (!seen.insert(it.item_id).second) {
                throw ConfigError("corpus: duplicate item_id " + std::to_string(it.item_id));
            }
            identity_index_[it.identity_id].push_back(i);
        }
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    const std::vector<EmbeddingItem>& items() const noexcept { return items_; }
    const EmbeddingItem& operator[](std::size_t i) const noexcept { return items_[i]; }

    /// identity_id -> positions (into items()) in file order.
    const std::map<IdentityId, std::vector<std::size_t>>& identity_index() const noexcept { return identity_index_; }

    std::vector<IdentityId> identities() const {
        std::vector<IdentityId> ids;
        ids.reserve(identity_index_.size());
        for (const auto& [id, _] : identity_index_) {
            ids.push_back(id);
        }
        return ids;
    }

    friend bool operator==(const EmbeddingCorpus& a, const EmbeddingCorpus& b) {
        return a.dim_ == b.dim_ && a.items_ == b.items_;
    }

private:
    std::size_t dim_ = 0;
    std::vector<EmbeddingItem> items_;
    std::map<IdentityId, std::vector<std::size_t>> identity_index_;
};

struct SynthConfig {
    std::size_t num_identities = 100;
    std::size_t images_per_identity = 8;
    std::size_t dim = 64;
    double center_scale = 1.0;
    double noise_sigma = 0.5;
    double hard_fraction = 0.25;
    double hard_shift = 0.5;
    std::uint64_t seed = 7;

    void validate() const {
        if (num_identities == 0 || images_per_identity == 0) {
            throw ConfigError("synthetic corpus needs at least one identity and one image per identity");
        }
        if (dim == 0) {
            throw ConfigError("synthetic corpus dimension must be positive");
        }
        if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0) || !(hard_shift >= 0.0 && hard_shift <= 1.0)) {
            throw ConfigError("hard_fraction and hard_shift must lie in [0, 1]");
        }
        if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma) || !std::isfinite(center_scale)) {
            throw ConfigError("noise_sigma must be positive and finite");
        }
        if (hard_fraction > 0.0 && num_identities < 2) {
            throw ConfigError("planting hard positives needs at least two identities");
        }
    }

    /// Number of planted hard items per identity.
    std::size_t hard_count() const {
        return static_cast<std::size_t>(std::floor(hard_fraction * static_cast<double>(images_per_identity)));
    }
};

/// Synthetic corpus plus which items were planted as hard positives (item_id order).
struct SyntheticCorpus {
    EmbeddingCorpus corpus;
    std::vector<bool> is_hard;
    std::vector<std::vector<double>> centers;
};

/// Identity clusters around Gaussian centers; a fixed share of each identity's
/// items is pulled toward a foreign identity's center.
inline SyntheticCorpus generate_synthetic_detailed(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::vector<double>> centers(cfg.num_identities, std::vector<double>(cfg.dim));
    for (auto& c : centers) {
        for (double& v : c) {
            v = cfg.center_scale * normal(rng);
        }
    }

    const std::size_t hard_per_identity = cfg.hard_count();
    std::vector<EmbeddingItem> items;
    std::vector<bool> is_hard;
    items.reserve(cfg.num_identities * cfg.images_per_identity);
    for (std::size_t id = 0; id < cfg.num_identities; ++id) {
        std::vector<std::size_t> order(cfg.images_per_identity);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> hard_slot(cfg.images_per_identity, false);
        for (std::size_t h = 0; h < hard_per_identity; ++h) {
            hard_slot[order[h]] = true;
        }
        for (std::size_t k = 0; k < cfg.images_per_identity; ++k) {
            EmbeddingItem it;
            it.item_id = static_cast<ItemId>(items.size());
            it.identity_id = static_cast<IdentityId>(id);
            it.raw.resize(cfg.dim);
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                it.raw[d] = centers[id][d] + cfg.noise_sigma * normal(rng);
            }
            if (hard_slot[k]) {
                std::uniform_int_distribution<std::size_t> pick(0, cfg.num_identities - 2);
                std::size_t other = pick(rng);
                if (other >= id) {
                    ++other;
                }
                for (std::size_t d = 0; d < cfg.dim; ++d) {
                    it.raw[d] += cfg.hard_shift * (centers[other][d] - it.raw[d]);
                }
            }
            items.push_back(std::move(it));
            is_hard.push_back(hard_slot[k]);
        }
    }
    return SyntheticCorpus{EmbeddingCorpus(cfg.dim, std::move(items)), std::move(is_hard), std::move(centers)};
}

inline EmbeddingCorpus generate_synthetic(const SynthConfig& cfg) { return generate_synthetic_detailed(cfg).corpus; }

namespace detail {

inline std::string format_feature(double v) {
    char buf[64];
    const int n = std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars rejects a leading '+', accept it like strtod would.
        if (first != last && *first == '+') {
            ++first;
        }
    }
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> toks;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            ++i;
        }
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') {
            ++i;
        }
        if (i > start) {
            toks.push_back(line.substr(start, i - start));
        }
    }
    return toks;
}

} // namespace detail

/// Serializes to the corpus text format: "N D" header, then one
/// "item_id identity_id camera_id f_1 .. f_D" row per item, features at 9 significant digits.
inline std::string format_corpus(const EmbeddingCorpus& corpus) {
    std::string out = std::to_string(corpus.size()) + " " + std::to_string(corpus.dim()) + "\n";
    for (const auto& it : corpus.items()) {
        out += std::to_string(it.item_id);
        out += ' ';
        out += std::to_string(it.identity_id);
        out += ' ';
        out += std::to_string(it.camera_id);
        for (double v : it.raw) {
            out += ' ';
            out += detail::format_feature(v);
        }
        out += '\n';
    }
    return out;
}

inline EmbeddingCorpus parse_corpus(std::string_view text) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) {
            return false;
        }
        const std::size_t end = text.find('\n', pos);
        line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        pos = end == std::string_view::npos ? text.size() : end + 1;
        ++line_no;
        return true;
    };

    std::string_view line;
    if (!next_line(line)) {
        throw ParseError("empty corpus file", 1);
    }
    const auto header = detail::split_ws(line);
    std::size_t count = 0;
    std::size_t dim = 0;
    if (header.size() != 2 || !detail::parse_number(header[0], count) || !detail::parse_number(header[1], dim)) {
        throw ParseError("malformed header, expected \"N D\"", line_no);
    }

    std::vector<EmbeddingItem> items;
    items.reserve(count);
    std::unordered_set<ItemId> seen;
    while (items.size() < count) {
        if (!next_line(line)) {
            throw ParseError("expected " + std::to_string(count) + " rows, found " + std::to_string(items.size()),
                             line_no + 1);
        }
        const auto toks = detail::split_ws(line);
        if (toks.size() != dim + 3) {
            throw ParseError("row has " + std::to_string(toks.size()) + " fields, expected " + std::to_string(dim + 3),
                             line_no);
        }
        EmbeddingItem it;
        if (!detail::parse_number(toks[0], it.item_id) || !detail::parse_number(toks[1], it.identity_id) ||
            !detail::parse_number(toks[2], it.camera_id) || it.item_id < 0 || it.identity_id < 0 ||
            it.camera_id < 0) {
            throw ParseError("malformed id field", line_no);
        }
        if (!seen.insert(it.item_id).second) {
            throw ParseError("duplicate item_id " + std::to_string(it.item_id), line_no);
        }
        it.raw.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            if (!detail::parse_number(toks[3 + d], it.raw[d])) {
                throw ParseError("malformed feature value '" + std::string(toks[3 + d]) + "'", line_no);
            }
            if (!std::isfinite(it.raw[d])) {
                throw ParseError("non-finite feature value", line_no);
            }
        }
        items.push_back(std::move(it));
    }
    while (next_line(line)) {
        if (!detail::split_ws(line).empty()) {
            throw ParseError("unexpected content after " + std::to_string(count) + " rows", line_no);
        }
    }
    return EmbeddingCorpus(dim, std::move(items));
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

inline EmbeddingCorpus load_corpus(const std::filesystem::path& path) { return parse_corpus(read_text_file(path)); }

inline void save_corpus(const EmbeddingCorpus& corpus, const std::filesystem::path& path) {
    write_text_file(path, format_corpus(corpus));
}

struct CorpusSplit {
    EmbeddingCorpus train;
    EmbeddingCorpus test;
};

/// Identity-disjoint split: floor(fraction * identities) identities (in seeded
/// shuffle order) go to train, the rest to test. Items keep corpus order.
inline CorpusSplit split_corpus(const EmbeddingCorpus& corpus, double train_identity_fraction, std::uint64_t seed) {
    if (!(train_identity_fraction > 0.0 && train_identity_fraction < 1.0)) {
        throw ConfigError("train identity fraction must lie strictly between 0 and 1");
    }
    std::vector<IdentityId> ids = corpus.identities();
    const auto n_train =
        static_cast<std::size_t>(std::floor(train_identity_fraction * static_cast<double>(ids.size())));
    if (n_train == 0 || n_train == ids.size()) {
        throw ConfigError("train identity fraction " + std::to_string(train_identity_fraction) + " on " +
                          std::to_string(ids.size()) + " identities leaves one side empty");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::set<IdentityId> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));

    std::vector<EmbeddingItem> train;
    std::vector<EmbeddingItem> test;
    for (const auto& it : corpus.items()) {
        (train_ids.count(it.identity_id) ? train : test).push_back(it);
    }
    return {EmbeddingCorpus(corpus.dim(), std::move(train)), EmbeddingCorpus(corpus.dim(), std::move(test))};
}

} // namespace sggnn
