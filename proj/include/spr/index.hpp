#pragma once

#include <spr/binary.hpp>
#include <spr/embedding.hpp>
#include <spr/error.hpp>
#include <spr/kmeans.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace spr {

enum class IndexKind : std::uint8_t { flat = 0, ivf = 1, ivfpq = 2 };

inline std::string_view to_string(IndexKind kind) {
    switch (kind) {
        case IndexKind::flat: return "flat";
        case IndexKind::ivf: return "ivf";
        case IndexKind::ivfpq: return "ivfpq";
    }
    return "unknown";
}

inline IndexKind parse_index_kind(std::string_view name) {
    if (name == "flat") return IndexKind::flat;
    if (name == "ivf") return IndexKind::ivf;
    if (name == "ivfpq") return IndexKind::ivfpq;
    fail(ErrorCode::invalid_argument, "unknown index kind '" + std::string(name) + "'");
}

struct SearchParams {
    std::size_t top_k = 10;
    std::size_t nprobe = 1;  // clamped to nlist; ignored by flat
};

struct Hit {
    std::string id;
    float score = 0.0f;

    bool operator==(const Hit&) const = default;
};

/// ceil(sqrt(n)) clamped to [4, 8192] and to n.
inline std::size_t default_nlist(std::size_t n) {
    auto nlist = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    nlist = std::clamp<std::size_t>(nlist, 4, 8192);
    return std::max<std::size_t>(1, std::min(nlist, n));
}

namespace detail {

// Bounded selection of the best k rows ordered by (score desc, id asc).
class TopK {
public:
    TopK(std::size_t k, const std::vector<std::string>& ids) : k_(k), better_{&ids} { heap_.reserve(k + 1); }

    void push(float score, std::size_t row) {
        if (k_ == 0) {
            return;
        }
        const Entry e{score, row};
        if (heap_.size() < k_) {
            heap_.push_back(e);
            std::push_heap(heap_.begin(), heap_.end(), better_);
        } else if (better_(e, heap_.front())) {
            // The heap front is the worst retained entry.
            std::pop_heap(heap_.begin(), heap_.end(), better_);
            heap_.back() = e;
            std::push_heap(heap_.begin(), heap_.end(), better_);
        }
    }

    std::vector<Hit> finish() {
        std::sort(heap_.begin(), heap_.end(), better_);
        std::vector<Hit> hits;
        hits.reserve(heap_.size());
        for (const Entry& e : heap_) {
            hits.push_back(Hit{(*better_.ids)[e.row], e.score});
        }
        heap_.clear();
        return hits;
    }

private:
    struct Entry {
        float score;
        std::size_t row;
    };

    struct Better {
        const std::vector<std::string>* ids;
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.score != b.score) {
                return a.score > b.score;
            }
            return (*ids)[a.row] < (*ids)[b.row];
        }
    };

    std::size_t k_;
    Better better_;
    std::vector<Entry> heap_;
};

inline void check_query(std::span<const float> query, std::size_t dim) {
    require(query.size() == dim, ErrorCode::dimension_mismatch,
            "query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                std::to_string(dim));
}

inline std::size_t nearest_by_inner_product(std::span<const float> x, const Codebook& book) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < book.size(); ++c) {
        const double s = dot(x, book.centroid(c));
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

/// The `nprobe` coarse lists with the largest inner product with `query`.
inline std::vector<std::size_t> probe_lists(std::span<const float> query, const Codebook& coarse, std::size_t nprobe) {
    const std::size_t nlist = coarse.size();
    nprobe = std::clamp<std::size_t>(nprobe, 1, nlist);
    std::vector<std::pair<double, std::size_t>> scored(nlist);
    for (std::size_t c = 0; c < nlist; ++c) {
        scored[c] = {dot(query, coarse.centroid(c)), c};
    }
    auto order = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(nprobe), scored.end(), order);
    std::vector<std::size_t> lists(nprobe);
    for (std::size_t i = 0; i < nprobe; ++i) {
        lists[i] = scored[i].second;
    }
    return lists;
}

inline void check_sealed_table(const EmbeddingTable& table) {
    require(table.sealed(), ErrorCode::invalid_argument, "index input table must be sealed");
    require(!table.empty(), ErrorCode::invalid_argument, "cannot build an index over an empty table");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Flat

/// Exhaustive inner-product search over every stored row.
struct FlatIndex {
    EmbeddingTable table;

    std::size_t dim() const { return table.dim(); }
    std::size_t size() const { return table.size(); }
    const std::vector<std::string>& ids() const { return table.ids(); }
};

inline FlatIndex build_flat(const EmbeddingTable& table) {
    detail::check_sealed_table(table);
    return FlatIndex{table};
}

inline std::vector<Hit> search(const FlatIndex& index, std::span<const float> query, const SearchParams& params) {
    detail::check_query(query, index.dim());
    detail::TopK top(params.top_k, index.ids());
    for (std::size_t i = 0; i < index.size(); ++i) {
        top.push(static_cast<float>(dot(query, index.table.row(i))), i);
    }
    return top.finish();
}

// ---------------------------------------------------------------------------
// IVF

/// Inverted file: rows are grouped under their nearest coarse centroid (by
/// inner product) and only the `nprobe` closest lists are scanned.
struct IVFIndex {
    std::size_t dim_ = 0;
    Codebook coarse;
    std::vector<std::string> row_ids;
    std::vector<std::vector<std::size_t>> list_rows;
    std::vector<std::vector<float>> list_vectors;

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return row_ids.size(); }
    std::size_t nlist() const { return coarse.size(); }
    const std::vector<std::string>& ids() const { return row_ids; }
};

inline IVFIndex build_ivf(const EmbeddingTable& table, std::size_t nlist, KMeansConfig km) {
    detail::check_sealed_table(table);
    require(nlist >= 1 && table.size() >= nlist, ErrorCode::invalid_argument,
            "IVF needs at least nlist rows (nlist=" + std::to_string(nlist) + ", rows=" + std::to_string(table.size()) +
                ")");
    km.k = nlist;
    IVFIndex index;
    index.dim_ = table.dim();
    index.coarse = kmeans(table.view(), km);
    index.row_ids = table.ids();
    index.list_rows.resize(nlist);
    index.list_vectors.resize(nlist);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto row = table.row(i);
        const std::size_t list = detail::nearest_by_inner_product(row, index.coarse);
        index.list_rows[list].push_back(i);
        index.list_vectors[list].insert(index.list_vectors[list].end(), row.begin(), row.end());
    }
    return index;
}

inline std::vector<Hit> search(const IVFIndex& index, std::span<const float> query, const SearchParams& params) {
    detail::check_query(query, index.dim());
    detail::TopK top(params.top_k, index.ids());
    const std::size_t d = index.dim();
    for (std::size_t list : detail::probe_lists(query, index.coarse, params.nprobe)) {
        const auto& rows = index.list_rows[list];
        const auto& vecs = index.list_vectors[list];
        for (std::size_t j = 0; j < rows.size(); ++j) {
            top.push(static_cast<float>(dot(query, std::span<const float>(vecs.data() + j * d, d))), rows[j]);
        }
    }
    return top.finish();
}

// ---------------------------------------------------------------------------
// IVFPQ

/// Inverted file whose rows are stored as product-quantized residuals
/// (x - coarse centroid), one byte per sub-vector, scored by ADC.
struct IVFPQIndex {
    std::size_t dim_ = 0;
    Codebook coarse;
    std::size_t m = 1;
    std::size_t nbits = 8;
    std::vector<Codebook> pq;  // m codebooks of 2^nbits centroids over dim/m
    std::vector<std::string> row_ids;
    std::vector<std::vector<std::size_t>> list_rows;
    std::vector<std::vector<std::uint8_t>> list_codes;  // m bytes per row

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return row_ids.size(); }
    std::size_t nlist() const { return coarse.size(); }
    std::size_t sub_dim() const { return dim_ / m; }
    std::size_t ksub() const { return std::size_t{1} << nbits; }
    std::size_t code_size() const { return m; }
    const std::vector<std::string>& ids() const { return row_ids; }
};

inline IVFPQIndex build_ivfpq(const EmbeddingTable& table, std::size_t nlist, std::size_t m, std::size_t nbits,
                              KMeansConfig km) {
    detail::check_sealed_table(table);
    const std::size_t d = table.dim();
    require(m >= 1 && d % m == 0, ErrorCode::invalid_argument,
            "m must divide d (d=" + std::to_string(d) + ", m=" + std::to_string(m) + ")");
    require(nbits >= 1 && nbits <= 8, ErrorCode::invalid_argument, "nbits must be in [1, 8]");
    const std::size_t ksub = std::size_t{1} << nbits;
    require(nlist >= 1 && table.size() >= std::max(nlist, ksub), ErrorCode::invalid_argument,
            "IVFPQ needs at least max(nlist, 2^nbits) rows");

    IVFPQIndex index;
    index.dim_ = d;
    index.m = m;
    index.nbits = nbits;
    KMeansConfig coarse_cfg = km;
    coarse_cfg.k = nlist;
    index.coarse = kmeans(table.view(), coarse_cfg);

    const std::size_t n = table.size();
    const std::size_t sd = d / m;
    std::vector<std::size_t> assignment(n);
    std::vector<float> residuals(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = table.row(i);
        assignment[i] = detail::nearest_by_inner_product(row, index.coarse);
        const auto c = index.coarse.centroid(assignment[i]);
        for (std::size_t j = 0; j < d; ++j) {
            residuals[i * d + j] = row[j] - c[j];
        }
    }

    index.pq.reserve(m);
    std::vector<float> sub(n * sd);
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(residuals.begin() + static_cast<std::ptrdiff_t>(i * d + s * sd), sd,
                        sub.begin() + static_cast<std::ptrdiff_t>(i * sd));
        }
        KMeansConfig sub_cfg = km;
        sub_cfg.k = ksub;
        sub_cfg.seed = km.seed + 1 + s;
        index.pq.push_back(kmeans(MatrixView{sub, n, sd}, sub_cfg));
    }

    index.row_ids = table.ids();
    index.list_rows.resize(nlist);
    index.list_codes.resize(nlist);
    for (std::size_t i = 0; i < n; ++i) {
        auto& codes = index.list_codes[assignment[i]];
        for (std::size_t s = 0; s < m; ++s) {
            const std::span<const float> r(residuals.data() + i * d + s * sd, sd);
            codes.push_back(static_cast<std::uint8_t>(detail::nearest_l2(r, index.pq[s].view(), nullptr)));
        }
        index.list_rows[assignment[i]].push_back(i);
    }
    return index;
}

/// Coarse centroid plus decoded residual of the `pos`-th entry of `list`.
inline Embedding reconstruct(const IVFPQIndex& index, std::size_t list, std::size_t pos) {
    require(list < index.nlist() && pos < index.list_rows[list].size(), ErrorCode::not_found, "no such list entry");
    const std::size_t sd = index.sub_dim();
    Embedding out(index.dim());
    const auto c = index.coarse.centroid(list);
    for (std::size_t s = 0; s < index.m; ++s) {
        const auto word = index.pq[s].centroid(index.list_codes[list][pos * index.m + s]);
        for (std::size_t j = 0; j < sd; ++j) {
            out[s * sd + j] = c[s * sd + j] + word[j];
        }
    }
    return out;
}

/// Per-list lookup table for asymmetric distance computation.
struct AdcTable {
    double coarse_term = 0.0;       // <query, coarse centroid of the list>
    std::size_t m = 0;
    std::size_t ksub = 0;
    std::vector<float> entries;     // m x ksub: <query sub-vector j, codeword c of book j>

    float at(std::size_t sub, std::size_t code) const { return entries[sub * ksub + code]; }

    float score(std::span<const std::uint8_t> code) const {
        double s = coarse_term;
        for (std::size_t j = 0; j < m; ++j) {
            s += entries[j * ksub + code[j]];
        }
        return static_cast<float>(s);
    }
};

inline AdcTable pq_adc_table(std::span<const float> query, const IVFPQIndex& index, std::size_t list_id) {
    detail::check_query(query, index.dim());
    require(list_id < index.nlist(), ErrorCode::not_found, "unknown list " + std::to_string(list_id));
    AdcTable table;
    table.coarse_term = dot(query, index.coarse.centroid(list_id));
    table.m = index.m;
    table.ksub = index.ksub();
    table.entries.resize(table.m * table.ksub);
    const std::size_t sd = index.sub_dim();
    for (std::size_t s = 0; s < index.m; ++s) {
        const auto q = query.subspan(s * sd, sd);
        for (std::size_t c = 0; c < table.ksub; ++c) {
            table.entries[s * table.ksub + c] = static_cast<float>(dot(q, index.pq[s].centroid(c)));
        }
    }
    return table;
}

inline std::vector<Hit> search(const IVFPQIndex& index, std::span<const float> query, const SearchParams& params) {
    detail::check_query(query, index.dim());
    detail::TopK top(params.top_k, index.ids());
    for (std::size_t list : detail::probe_lists(query, index.coarse, params.nprobe)) {
        const AdcTable adc = pq_adc_table(query, index, list);
        const auto& rows = index.list_rows[list];
        const auto& codes = index.list_codes[list];
        for (std::size_t j = 0; j < rows.size(); ++j) {
            top.push(adc.score(std::span<const std::uint8_t>(codes.data() + j * index.m, index.m)), rows[j]);
        }
    }
    return top.finish();
}

// ---------------------------------------------------------------------------
// Type-erased index

using VectorIndex = std::variant<FlatIndex, IVFIndex, IVFPQIndex>;

inline IndexKind kind_of(const VectorIndex& index) { return static_cast<IndexKind>(index.index()); }

inline std::size_t dim_of(const VectorIndex& index) {
    return std::visit([](const auto& i) { return i.dim(); }, index);
}

inline std::size_t size_of(const VectorIndex& index) {
    return std::visit([](const auto& i) { return i.size(); }, index);
}

inline const std::vector<std::string>& ids_of(const VectorIndex& index) {
    return std::visit([](const auto& i) -> const std::vector<std::string>& { return i.ids(); }, index);
}

inline std::size_t nlist_of(const VectorIndex& index) {
    return std::visit(
        [](const auto& i) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(i)>, FlatIndex>) {
                return 0;
            } else {
                return i.nlist();
            }
        },
        index);
}

inline std::vector<Hit> search(const VectorIndex& index, std::span<const float> query, const SearchParams& params) {
    return std::visit([&](const auto& i) { return search(i, query, params); }, index);
}

struct IndexBuildParams {
    IndexKind kind = IndexKind::flat;
    std::size_t nlist = 0;  // 0: default_nlist(rows)
    std::size_t m = 16;
    std::size_t nbits = 8;
    KMeansConfig kmeans;
};

inline VectorIndex build_index(const EmbeddingTable& table, const IndexBuildParams& params) {
    const std::size_t nlist = params.nlist == 0 ? default_nlist(table.size()) : params.nlist;
    switch (params.kind) {
        case IndexKind::flat:
            return build_flat(table);
        case IndexKind::ivf:
            return build_ivf(table, nlist, params.kmeans);
        case IndexKind::ivfpq:
            return build_ivfpq(table, nlist, params.m, params.nbits, params.kmeans);
    }
    fail(ErrorCode::invalid_argument, "unknown index kind");
}

// ---------------------------------------------------------------------------
// Persistence
//
// "SPRI" | version u32 | kind u8 | dim u32 | rows u64 | payload | crc32(payload) u32

inline constexpr std::string_view kIndexMagic = "SPRI";
inline constexpr std::uint32_t kIndexVersion = 1;

namespace detail {

inline void put_codebook(BinaryWriter& w, const Codebook& book) {
    w.u32(static_cast<std::uint32_t>(book.size()));
    w.u32(static_cast<std::uint32_t>(book.dim));
    w.u64(std::bit_cast<std::uint64_t>(book.inertia));
    w.f32s(book.centroids);
}

inline Codebook get_codebook(BinaryReader& r) {
    Codebook book;
    const auto k = r.u32();
    book.dim = r.u32();
    book.inertia = std::bit_cast<double>(r.u64());
    r.expect_at_least(static_cast<std::uint64_t>(k) * book.dim, 4);
    book.centroids.resize(static_cast<std::size_t>(k) * book.dim);
    r.f32s(book.centroids);
    return book;
}

inline void put_ids(BinaryWriter& w, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
        w.str(id);
    }
}

inline std::vector<std::string> get_ids(BinaryReader& r, std::uint64_t rows) {
    r.expect_at_least(rows, 4);
    std::vector<std::string> ids;
    ids.reserve(rows);
    for (std::uint64_t i = 0; i < rows; ++i) {
        ids.push_back(r.str());
    }
    return ids;
}

inline void put_rows(BinaryWriter& w, const std::vector<std::size_t>& rows) {
    w.u64(rows.size());
    for (auto row : rows) {
        w.u64(row);
    }
}

inline std::vector<std::size_t> get_rows(BinaryReader& r, std::uint64_t total) {
    const auto count = r.u64();
    r.expect_at_least(count, 8);
    std::vector<std::size_t> rows(count);
    for (auto& row : rows) {
        row = r.u64();
        require(row < total, ErrorCode::corrupt, "index file: row id out of range");
    }
    return rows;
}

inline void payload(BinaryWriter& w, const FlatIndex& index) {
    put_ids(w, index.ids());
    w.f32s(index.table.data());
}

inline void payload(BinaryWriter& w, const IVFIndex& index) {
    put_codebook(w, index.coarse);
    put_ids(w, index.ids());
    for (std::size_t l = 0; l < index.nlist(); ++l) {
        put_rows(w, index.list_rows[l]);
        w.f32s(index.list_vectors[l]);
    }
}

inline void payload(BinaryWriter& w, const IVFPQIndex& index) {
    put_codebook(w, index.coarse);
    w.u32(static_cast<std::uint32_t>(index.m));
    w.u32(static_cast<std::uint32_t>(index.nbits));
    for (const auto& book : index.pq) {
        put_codebook(w, book);
    }
    put_ids(w, index.ids());
    for (std::size_t l = 0; l < index.nlist(); ++l) {
        put_rows(w, index.list_rows[l]);
        for (auto byte : index.list_codes[l]) {
            w.u8(byte);
        }
    }
}

}  // namespace detail

inline std::string serialize_index(const VectorIndex& index) {
    BinaryWriter body;
    std::visit([&](const auto& i) { detail::payload(body, i); }, index);
    BinaryWriter w;
    w.bytes(kIndexMagic);
    w.u32(kIndexVersion);
    w.u8(static_cast<std::uint8_t>(kind_of(index)));
    w.u32(static_cast<std::uint32_t>(dim_of(index)));
    w.u64(size_of(index));
    w.bytes(body.buffer());
    w.u32(crc32(body.buffer()));
    return w.take();
}

inline void save_index(std::ostream& out, const VectorIndex& index) {
    const std::string bytes = serialize_index(index);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::io, "failed to write index");
}

inline VectorIndex deserialize_index(std::string_view raw) {
    constexpr std::size_t kHeader = 4 + 4 + 1 + 4 + 8;
    require(raw.size() >= 4 && raw.substr(0, 4) == kIndexMagic, ErrorCode::corrupt, "index file: bad magic");
    require(raw.size() >= 8, ErrorCode::corrupt, "index file: truncated header");
    BinaryReader header(raw.substr(4), "index file");
    const auto version = header.u32();
    require(version == kIndexVersion, ErrorCode::unsupported_version,
            "index file: unsupported version " + std::to_string(version));
    require(raw.size() >= kHeader + 4, ErrorCode::corrupt, "index file: truncated");
    const auto kind_byte = header.u8();
    require(kind_byte <= 2, ErrorCode::corrupt, "index file: unknown index kind " + std::to_string(kind_byte));
    const std::size_t dim = header.u32();
    const std::uint64_t rows = header.u64();
    require(dim > 0, ErrorCode::corrupt, "index file: dimension 0");

    const std::string_view body = raw.substr(kHeader, raw.size() - kHeader - 4);
    BinaryReader tail(raw.substr(raw.size() - 4), "index file");
    require(tail.u32() == crc32(body), ErrorCode::corrupt, "index file: checksum mismatch");

    BinaryReader r(body, "index file");
    VectorIndex out;
    switch (static_cast<IndexKind>(kind_byte)) {
        case IndexKind::flat: {
            auto ids = detail::get_ids(r, rows);
            r.expect_at_least(rows * dim, 4);
            std::vector<float> data(rows * dim);
            r.f32s(data);
            out = FlatIndex{EmbeddingTable::from_sealed(dim, std::move(ids), std::move(data))};
            break;
        }
        case IndexKind::ivf: {
            IVFIndex index;
            index.dim_ = dim;
            index.coarse = detail::get_codebook(r);
            require(index.coarse.dim == dim && index.nlist() > 0, ErrorCode::corrupt, "index file: bad coarse codebook");
            index.row_ids = detail::get_ids(r, rows);
            for (std::size_t l = 0; l < index.nlist(); ++l) {
                index.list_rows.push_back(detail::get_rows(r, rows));
                std::vector<float> vecs(index.list_rows.back().size() * dim);
                r.f32s(vecs);
                index.list_vectors.push_back(std::move(vecs));
            }
            out = std::move(index);
            break;
        }
        case IndexKind::ivfpq: {
            IVFPQIndex index;
            index.dim_ = dim;
            index.coarse = detail::get_codebook(r);
            require(index.coarse.dim == dim && index.nlist() > 0, ErrorCode::corrupt, "index file: bad coarse codebook");
            index.m = r.u32();
            index.nbits = r.u32();
            require(index.m > 0 && dim % index.m == 0 && index.nbits >= 1 && index.nbits <= 8, ErrorCode::corrupt,
                    "index file: bad PQ parameters");
            for (std::size_t s = 0; s < index.m; ++s) {
                index.pq.push_back(detail::get_codebook(r));
                require(index.pq.back().dim == index.sub_dim() && index.pq.back().size() == index.ksub(),
                        ErrorCode::corrupt, "index file: bad PQ codebook");
            }
            index.row_ids = detail::get_ids(r, rows);
            for (std::size_t l = 0; l < index.nlist(); ++l) {
                index.list_rows.push_back(detail::get_rows(r, rows));
                const auto raw_codes = r.bytes(index.list_rows.back().size() * index.m);
                index.list_codes.emplace_back(raw_codes.begin(), raw_codes.end());
            }
            out = std::move(index);
            break;
        }
    }
    require(r.remaining() == 0, ErrorCode::corrupt, "index file: trailing bytes in payload");
    return out;
}

inline VectorIndex load_index(std::istream& in) {
    const std::string raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize_index(raw);
}

}  // namespace spr
