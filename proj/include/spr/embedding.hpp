#pragma once

#include <spr/binary.hpp>
#include <spr/corpus.hpp>
#include <spr/error.hpp>
#include <spr/jsonl.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spr {

using Embedding = std::vector<float>;

/// Row-major view over `rows` vectors of dimension `dim`.
struct MatrixView {
    std::span<const float> data;
    std::size_t rows = 0;
    std::size_t dim = 0;

    std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

// ---------------------------------------------------------------------------
// Vector math

inline double dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

inline double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

inline double squared_l2(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum;
}

inline bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

/// Scales `v` to unit length in place and returns its previous norm.
inline double normalize_in_place(std::span<float> v) {
    require(all_finite(v), ErrorCode::validation, "non-finite embedding entry");
    const double norm = l2_norm(v);
    require(norm > 0.0, ErrorCode::invalid_argument, "cannot normalize a zero vector");
    for (float& x : v) {
        x = static_cast<float>(static_cast<double>(x) / norm);
    }
    return norm;
}

inline Embedding normalize(std::span<const float> v) {
    Embedding out(v.begin(), v.end());
    normalize_in_place(out);
    return out;
}

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    require(a.size() == b.size(), ErrorCode::dimension_mismatch,
            "dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    require(na > 0.0 && nb > 0.0, ErrorCode::invalid_argument, "cosine similarity of a zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Toy text embedder

/// Lowercased alphanumeric runs of `text`, in input order.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) != 0) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

/// 64-bit FNV-1a over the 8 little-endian seed bytes followed by the token.
inline std::uint64_t fnv1a_seeded(std::uint64_t seed, std::string_view token) {
    std::uint64_t h = kFnvOffsetBasis;
    for (int i = 0; i < 8; ++i) {
        h ^= (seed >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
    }
    for (char c : token) {
        h ^= static_cast<unsigned char>(c);
        h *= kFnvPrime;
    }
    return h;
}

/// Signed feature hashing of the token multiset, then normalized. Stands in
/// for a frozen text encoder; only useful against vectors built the same way.
inline Embedding embed_text_toy(std::string_view text, std::size_t dim, std::uint64_t seed) {
    require(dim > 0, ErrorCode::invalid_argument, "embedding dimension must be positive");
    const auto tokens = tokenize(text);
    require(!tokens.empty(), ErrorCode::invalid_argument, "empty query");
    Embedding v(dim, 0.0f);
    for (const std::string& token : tokens) {
        const std::uint64_t h = fnv1a_seeded(seed, token);
        v[h % dim] += (h >> 63) != 0 ? -1.0f : 1.0f;
    }
    // Opposite-signed collisions can cancel to zero; normalize reports that.
    return normalize(v);
}

// ---------------------------------------------------------------------------
// EmbeddingTable

/// Named rows of equal dimension. Sealing normalizes every row and freezes
/// the table.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
        require(dim > 0, ErrorCode::invalid_argument, "embedding dimension must be positive");
    }

    void add(std::string id, std::span<const float> values) {
        require(!sealed_, ErrorCode::invalid_argument, "embedding table is sealed");
        require(values.size() == dim_, ErrorCode::dimension_mismatch,
                "row '" + id + "' has dimension " + std::to_string(values.size()) + ", expected " +
                    std::to_string(dim_));
        require(all_finite(values), ErrorCode::validation, "non-finite value in row '" + id + "'");
        require(!by_id_.contains(id), ErrorCode::duplicate, "duplicate embedding id '" + id + "'");
        by_id_.emplace(id, ids_.size());
        ids_.push_back(std::move(id));
        data_.insert(data_.end(), values.begin(), values.end());
    }

    /// Normalizes all rows; returns how many deviated from unit norm by more
    /// than `tolerance` beforehand.
    std::size_t seal(double tolerance = 1e-3) {
        if (sealed_) {
            return 0;
        }
        std::size_t deviating = 0;
        for (std::size_t i = 0; i < size(); ++i) {
            std::span<float> r(data_.data() + i * dim_, dim_);
            double norm = 0.0;
            try {
                norm = normalize_in_place(r);
            } catch (const Error& e) {
                fail(e.code(), "row " + std::to_string(i) + " ('" + ids_[i] + "'): " + e.what());
            }
            if (std::abs(norm - 1.0) > tolerance) {
                ++deviating;
            }
        }
        sealed_ = true;
        return deviating;
    }

    /// Rebuilds a table whose rows were already normalized (e.g. read back
    /// from an index file) without touching the stored bits.
    static EmbeddingTable from_sealed(std::size_t dim, std::vector<std::string> ids, std::vector<float> data) {
        require(data.size() == ids.size() * dim, ErrorCode::validation, "table rows and ids disagree");
        EmbeddingTable table(dim);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            require(!table.by_id_.contains(ids[i]), ErrorCode::duplicate, "duplicate embedding id '" + ids[i] + "'");
            table.by_id_.emplace(ids[i], i);
        }
        require(all_finite(data), ErrorCode::validation, "non-finite value in sealed table");
        table.ids_ = std::move(ids);
        table.data_ = std::move(data);
        table.sealed_ = true;
        return table;
    }

    bool sealed() const { return sealed_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }

    const std::string& id(std::size_t row) const { return ids_[row]; }
    const std::vector<std::string>& ids() const { return ids_; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    const std::vector<float>& data() const { return data_; }
    MatrixView view() const { return MatrixView{data_, size(), dim_}; }

    std::optional<std::size_t> find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        if (it == by_id_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    bool operator==(const EmbeddingTable& other) const {
        return dim_ == other.dim_ && ids_ == other.ids_ && data_ == other.data_;
    }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> by_id_;
    bool sealed_ = false;
};

// ---------------------------------------------------------------------------
// Binary matrix + id manifest

inline constexpr std::string_view kMatrixMagic = "SPRB";
inline constexpr std::uint32_t kMatrixVersion = 1;

inline void write_matrix(std::ostream& out, std::span<const float> data, std::size_t dim) {
    BinaryWriter w;
    w.bytes(kMatrixMagic);
    w.u32(kMatrixVersion);
    w.u32(static_cast<std::uint32_t>(dim));
    w.u64(dim == 0 ? 0 : data.size() / dim);
    w.f32s(data);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
}

/// Reads a binary matrix; returns (dim, row-major data).
inline std::pair<std::size_t, std::vector<float>> read_matrix(std::istream& in, const std::string& source = "matrix") {
    const std::string raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    BinaryReader r(raw, source);
    require(raw.size() >= 4 && r.bytes(4) == kMatrixMagic, ErrorCode::corrupt, source + ": bad magic");
    const auto version = r.u32();
    require(version == kMatrixVersion, ErrorCode::unsupported_version,
            source + ": unsupported version " + std::to_string(version));
    const auto dim = r.u32();
    require(dim > 0, ErrorCode::validation, source + ": dimension 0");
    const auto count = r.u64();
    const std::uint64_t present = r.remaining() / (4ull * dim);
    require(present >= count && r.remaining() >= count * 4ull * dim, ErrorCode::corrupt,
            source + ": truncated matrix (header says " + std::to_string(count) + " rows, found " +
                std::to_string(present) + ")");
    std::vector<float> data(static_cast<std::size_t>(count) * dim);
    r.f32s(data);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            fail(ErrorCode::validation, source + ": non-finite value at row " + std::to_string(i / dim));
        }
    }
    return {dim, std::move(data)};
}

inline void write_id_manifest(std::ostream& out, const std::vector<std::string>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        write_jsonl_record(out, json{{"row", i}, {"id", ids[i]}});
    }
}

inline std::vector<std::string> read_id_manifest(std::istream& in, const std::string& source = "ids") {
    std::vector<std::string> ids;
    read_jsonl(in, source, [&](std::size_t, const json& record) {
        const auto row = get_field<std::size_t>(record, "row");
        require(row == ids.size(), ErrorCode::validation,
                "expected row " + std::to_string(ids.size()) + ", got " + std::to_string(row));
        ids.push_back(get_field<std::string>(record, "id"));
    });
    return ids;
}

inline void write_table(std::ostream& matrix_out, std::ostream& ids_out, const EmbeddingTable& table) {
    write_matrix(matrix_out, table.data(), table.dim());
    write_id_manifest(ids_out, table.ids());
}

/// Loads and seals a table. Rows are renormalized; a warning goes to `log`
/// when any row was more than 1e-3 away from unit norm.
inline EmbeddingTable load_embeddings(std::istream& matrix_in, std::istream& ids_in,
                                      std::ostream* log = &std::clog, const std::string& source = "embeddings") {
    auto [dim, data] = read_matrix(matrix_in, source);
    const auto ids = read_id_manifest(ids_in, source + " ids");
    const std::size_t rows = data.size() / dim;
    require(ids.size() == rows, ErrorCode::validation,
            source + ": id manifest has " + std::to_string(ids.size()) + " rows, matrix has " + std::to_string(rows));
    EmbeddingTable table(dim);
    for (std::size_t i = 0; i < rows; ++i) {
        table.add(ids[i], std::span<const float>(data.data() + i * dim, dim));
    }
    const std::size_t deviating = table.seal();
    if (deviating > 0 && log != nullptr) {
        *log << "warning: " << source << ": renormalized " << deviating << " rows deviating from unit norm\n";
    }
    return table;
}

// ---------------------------------------------------------------------------
// FrameStore

/// Per-second frame embeddings per video (1 fps), unit-norm rows.
class FrameStore {
public:
    FrameStore() = default;
    explicit FrameStore(std::size_t dim) : dim_(dim) {
        require(dim > 0, ErrorCode::invalid_argument, "frame dimension must be positive");
    }

    /// `frames` is row-major, one row per second starting at t = 0.
    void add_video(const std::string& video_id, std::vector<float> frames) {
        require(!videos_.contains(video_id), ErrorCode::duplicate, "duplicate frames for video '" + video_id + "'");
        require(frames.size() % dim_ == 0, ErrorCode::dimension_mismatch,
                "frame buffer for '" + video_id + "' is not a multiple of the dimension");
        for (std::size_t i = 0; i < frames.size(); i += dim_) {
            normalize_in_place(std::span<float>(frames.data() + i, dim_));
        }
        videos_.emplace(video_id, std::move(frames));
    }

    bool contains(std::string_view video_id) const { return videos_.contains(std::string(video_id)); }

    MatrixView frames(std::string_view video_id) const {
        auto it = videos_.find(std::string(video_id));
        require(it != videos_.end(), ErrorCode::not_found, "no frames for video '" + std::string(video_id) + "'");
        return MatrixView{it->second, it->second.size() / dim_, dim_};
    }

    /// Frames whose one-second span intersects [start_s, end_s).
    MatrixView slice(std::string_view video_id, double start_s, double end_s, std::size_t* first_frame = nullptr) const {
        const MatrixView all = frames(video_id);
        auto [first, last] = frame_range(start_s, end_s, all.rows);
        if (first_frame != nullptr) {
            *first_frame = first;
        }
        return MatrixView{all.data.subspan(first * dim_, (last - first) * dim_), last - first, dim_};
    }

    static std::pair<std::size_t, std::size_t> frame_range(double start_s, double end_s, std::size_t available) {
        const double lo = std::floor(std::max(0.0, start_s) + 1e-9);
        const double hi = std::ceil(end_s - 1e-9);
        auto first = static_cast<std::size_t>(std::max(0.0, lo));
        auto last = static_cast<std::size_t>(std::max(0.0, hi));
        last = std::min(last, available);
        first = std::min(first, last);
        return {first, last};
    }

    /// Every corpus video must have ceil(duration) frames.
    void validate(const Corpus& corpus) const {
        for (const VideoMeta& video : corpus.videos()) {
            const auto expected = static_cast<std::size_t>(std::ceil(video.duration_s - 1e-9));
            const std::size_t have = contains(video.video_id) ? frames(video.video_id).rows : 0;
            require(have == expected, ErrorCode::validation,
                    "video '" + video.video_id + "' has " + std::to_string(have) + " frames, expected " +
                        std::to_string(expected));
        }
    }

    std::size_t dim() const { return dim_; }
    std::size_t num_videos() const { return videos_.size(); }
    const std::map<std::string, std::vector<float>>& videos() const { return videos_; }

    bool operator==(const FrameStore& other) const = default;

private:
    std::size_t dim_ = 0;
    std::map<std::string, std::vector<float>> videos_;
};

/// Frame rows are stored as one binary matrix; ids are "<video_id>@<second>".
inline void write_frame_store(std::ostream& matrix_out, std::ostream& ids_out, const FrameStore& store) {
    std::vector<float> all;
    std::vector<std::string> ids;
    for (const auto& [video_id, frames] : store.videos()) {
        all.insert(all.end(), frames.begin(), frames.end());
        for (std::size_t t = 0; t < frames.size() / store.dim(); ++t) {
            ids.push_back(video_id + "@" + std::to_string(t));
        }
    }
    write_matrix(matrix_out, all, store.dim());
    write_id_manifest(ids_out, ids);
}

inline FrameStore load_frame_store(std::istream& matrix_in, std::istream& ids_in, const std::string& source = "frames") {
    auto [dim, data] = read_matrix(matrix_in, source);
    const auto ids = read_id_manifest(ids_in, source + " ids");
    require(ids.size() * dim == data.size(), ErrorCode::validation, source + ": id manifest and matrix disagree");
    FrameStore store(dim);
    std::size_t i = 0;
    while (i < ids.size()) {
        const auto at = ids[i].rfind('@');
        require(at != std::string::npos, ErrorCode::validation, source + ": bad frame id '" + ids[i] + "'");
        const std::string video = ids[i].substr(0, at);
        std::size_t j = i;
        while (j < ids.size() && ids[j] == video + "@" + std::to_string(j - i)) {
            ++j;
        }
        require(j > i, ErrorCode::validation, source + ": frame ids of '" + video + "' must start at 0");
        store.add_video(video, std::vector<float>(data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                                  data.begin() + static_cast<std::ptrdiff_t>(j * dim)));
        i = j;
    }
    return store;
}

// ---------------------------------------------------------------------------
// MIL-NCE

/// (query row, segment column) positives over a B x B similarity matrix.
using PositivePairSet = std::set<std::pair<std::size_t, std::size_t>>;

namespace detail {
inline double log_sum_exp(const std::vector<double>& xs) {
    const double m = *std::max_element(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}
}  // namespace detail

/// Symmetric MIL-NCE over a row-major B x B similarity matrix (no
/// temperature; pre-scale `sim` to apply one).
inline double mil_nce_loss(std::span<const double> sim, std::size_t batch, const PositivePairSet& positives) {
    require(batch >= 1, ErrorCode::invalid_argument, "batch must be non-empty");
    require(sim.size() == batch * batch, ErrorCode::dimension_mismatch, "similarity matrix must be B x B");
    std::vector<std::vector<double>> row_pos(batch);
    std::vector<std::vector<double>> col_pos(batch);
    for (const auto& [i, j] : positives) {
        require(i < batch && j < batch, ErrorCode::invalid_argument, "positive pair out of bounds");
        row_pos[i].push_back(sim[i * batch + j]);
        col_pos[j].push_back(sim[i * batch + j]);
    }
    double q2s = 0.0;
    double s2q = 0.0;
    std::vector<double> all(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        require(!row_pos[i].empty(), ErrorCode::invalid_argument, "row " + std::to_string(i) + " has no positive pair");
        require(!col_pos[i].empty(), ErrorCode::invalid_argument,
                "column " + std::to_string(i) + " has no positive pair");
        for (std::size_t j = 0; j < batch; ++j) {
            all[j] = sim[i * batch + j];
        }
        q2s += detail::log_sum_exp(all) - detail::log_sum_exp(row_pos[i]);
        for (std::size_t j = 0; j < batch; ++j) {
            all[j] = sim[j * batch + i];
        }
        s2q += detail::log_sum_exp(all) - detail::log_sum_exp(col_pos[i]);
    }
    const auto b = static_cast<double>(batch);
    return std::max(0.0, 0.5 * (q2s / b + s2q / b));
}

}  // namespace spr
