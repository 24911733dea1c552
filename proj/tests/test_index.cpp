#include <spr/index.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

using namespace spr;

namespace {

EmbeddingTable random_table(std::size_t n, std::size_t d, std::uint64_t seed, const std::string& prefix = "r") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    EmbeddingTable t(d);
    std::vector<float> v(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : v) x = g(rng);
        t.add(prefix + std::to_string(i), v);
    }
    t.seal();
    return t;
}

Embedding random_unit(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<float> g;
    Embedding v(d);
    for (auto& x : v) x = g(rng);
    return normalize(v);
}

// Straightforward exhaustive ranking: score every row, sort by
// (score desc, id asc), keep k.
std::vector<Hit> brute_force(const EmbeddingTable& t, const Embedding& q, std::size_t k) {
    std::vector<Hit> all;
    for (std::size_t i = 0; i < t.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.dim(); ++j) s += static_cast<double>(q[j]) * t.row(i)[j];
        all.push_back(Hit{t.id(i), static_cast<float>(s)});
    }
    std::sort(all.begin(), all.end(),
              [](const Hit& a, const Hit& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; });
    all.resize(std::min(k, all.size()));
    return all;
}

double recall(const std::vector<Hit>& got, const std::vector<Hit>& truth) {
    std::set<std::string> t;
    for (const auto& h : truth) t.insert(h.id);
    std::size_t hit = 0;
    for (const auto& h : got) hit += t.count(h.id);
    return truth.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace

TEST(Flat, MatchesBruteForce) {
    const auto t = random_table(800, 16, 1);
    const auto index = build_flat(t);
    std::mt19937_64 rng(2);
    for (int q = 0; q < 10; ++q) {
        const auto query = random_unit(16, rng);
        EXPECT_EQ(search(index, query, SearchParams{25, 1}), brute_force(t, query, 25));
    }
}

TEST(Flat, TieBreakById) {
    EmbeddingTable t(2);
    t.add("b", std::vector<float>{1, 0});
    t.add("a", std::vector<float>{1, 0});
    t.add("c", std::vector<float>{0, 1});
    t.seal();
    const auto hits = search(build_flat(t), std::vector<float>{1, 0}, SearchParams{3, 1});
    ASSERT_EQ(hits.size(), 3u);
    EXPECT_EQ(hits[0].id, "a");
    EXPECT_EQ(hits[1].id, "b");
    EXPECT_EQ(hits[2].id, "c");
}

TEST(Flat, KLargerThanCorpus) {
    const auto t = random_table(5, 4, 3);
    EXPECT_EQ(search(build_flat(t), t.row(0), SearchParams{200, 1}).size(), 5u);
}

TEST(Flat, IdentityQueryIsRankOne) {
    const auto t = random_table(100, 8, 4);
    const auto hits = search(build_flat(t), t.row(42), SearchParams{1, 1});
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].id, "r42");
    EXPECT_NEAR(hits[0].score, 1.0f, 1e-6);
}

TEST(Flat, DimensionMismatch) {
    const auto t = random_table(5, 4, 3);
    try {
        search(build_flat(t), std::vector<float>{1, 0, 0}, SearchParams{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
    }
}

TEST(Build, RequiresSealedNonEmpty) {
    EmbeddingTable open(3);
    open.add("x", std::vector<float>{1, 0, 0});
    EXPECT_THROW(build_flat(open), Error);
    EmbeddingTable empty(3);
    empty.seal();
    EXPECT_THROW(build_flat(empty), Error);
}

TEST(IVF, FullProbeEqualsFlat) {
    const auto t = random_table(1500, 16, 5);
    const auto flat = build_flat(t);
    const auto ivf = build_ivf(t, 20, KMeansConfig{});
    EXPECT_EQ(ivf.nlist(), 20u);
    std::size_t stored = 0;
    for (const auto& l : ivf.list_rows) stored += l.size();
    EXPECT_EQ(stored, t.size());
    std::mt19937_64 rng(6);
    for (int q = 0; q < 10; ++q) {
        const auto query = random_unit(16, rng);
        EXPECT_EQ(search(ivf, query, SearchParams{30, 20}), search(flat, query, SearchParams{30, 1}));
        EXPECT_EQ(search(ivf, query, SearchParams{30, 500}), search(flat, query, SearchParams{30, 1}));
    }
}

TEST(IVF, RecallGrowsWithNprobe) {
    const auto t = random_table(3000, 16, 7);
    const auto flat = build_flat(t);
    const auto ivf = build_ivf(t, 32, KMeansConfig{});
    std::mt19937_64 rng(8);
    std::vector<Embedding> queries;
    for (int q = 0; q < 20; ++q) queries.push_back(random_unit(16, rng));
    double prev = 0.0;
    for (std::size_t nprobe : {1, 2, 4, 8, 16, 32}) {
        double r = 0.0;
        for (const auto& q : queries) r += recall(search(ivf, q, {50, nprobe}), search(flat, q, {50, 1}));
        r /= 20.0;
        EXPECT_GE(r, prev - 1e-12);
        prev = r;
    }
    EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(IVF, NeedsEnoughRows) {
    const auto t = random_table(5, 4, 3);
    EXPECT_THROW(build_ivf(t, 6, KMeansConfig{}), Error);
}

TEST(IVFPQ, LosslessDegenerate) {
    const auto t = random_table(16, 8, 9);
    const auto pq = build_ivfpq(t, 1, 1, 4, KMeansConfig{});
    EXPECT_EQ(pq.pq[0].inertia, 0.0);
    const auto flat = build_flat(t);
    std::mt19937_64 rng(10);
    for (int q = 0; q < 10; ++q) {
        const auto query = random_unit(8, rng);
        EXPECT_DOUBLE_EQ(recall(search(pq, query, {10, 1}), search(flat, query, {10, 1})), 1.0);
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto rec = reconstruct(pq, 0, i);
        const auto row = t.row(pq.list_rows[0][i]);
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(rec[j], row[j], 1e-6);
    }
}

TEST(IVFPQ, AdcMatchesReconstructionInnerProduct) {
    const auto t = random_table(600, 16, 11);
    const auto pq = build_ivfpq(t, 4, 4, 4, KMeansConfig{});
    std::mt19937_64 rng(12);
    const auto query = random_unit(16, rng);
    for (std::size_t l = 0; l < pq.nlist(); ++l) {
        const AdcTable adc = pq_adc_table(query, pq, l);
        for (std::size_t p = 0; p < std::min<std::size_t>(pq.list_rows[l].size(), 20); ++p) {
            const auto rec = reconstruct(pq, l, p);
            const std::span<const std::uint8_t> code(pq.list_codes[l].data() + p * pq.m, pq.m);
            EXPECT_NEAR(adc.score(code), dot(query, rec), 1e-5);
        }
    }
    EXPECT_THROW(pq_adc_table(query, pq, 99), Error);
}

TEST(IVFPQ, ParameterValidation) {
    const auto t = random_table(300, 12, 13);
    EXPECT_THROW(build_ivfpq(t, 4, 5, 4, KMeansConfig{}), Error);  // 5 does not divide 12
    EXPECT_THROW(build_ivfpq(t, 4, 4, 9, KMeansConfig{}), Error);
    EXPECT_THROW(build_ivfpq(t, 4, 4, 0, KMeansConfig{}), Error);
    EXPECT_THROW(build_ivfpq(random_table(10, 12, 1), 1, 4, 4, KMeansConfig{}), Error);
}

TEST(DefaultNlist, Clamped) {
    EXPECT_EQ(default_nlist(1), 1u);
    EXPECT_EQ(default_nlist(10), 4u);
    EXPECT_EQ(default_nlist(10000), 100u);
    EXPECT_EQ(default_nlist(383828), 620u);
    EXPECT_EQ(default_nlist(100000000), 8192u);
}

namespace {

VectorIndex round_trip(const VectorIndex& index) {
    std::stringstream s;
    save_index(s, index);
    return load_index(s);
}

}  // namespace

TEST(Persistence, RoundTripEveryKind) {
    const auto t = random_table(400, 8, 14);
    std::mt19937_64 rng(15);
    const auto query = random_unit(8, rng);
    for (const VectorIndex& index : {VectorIndex{build_flat(t)}, VectorIndex{build_ivf(t, 8, KMeansConfig{})},
                                     VectorIndex{build_ivfpq(t, 4, 2, 4, KMeansConfig{})}}) {
        const VectorIndex back = round_trip(index);
        EXPECT_EQ(kind_of(back), kind_of(index));
        EXPECT_EQ(dim_of(back), 8u);
        EXPECT_EQ(size_of(back), 400u);
        EXPECT_EQ(ids_of(back), ids_of(index));
        EXPECT_EQ(search(back, query, {20, 3}), search(index, query, {20, 3}));
        EXPECT_EQ(serialize_index(back), serialize_index(index));
    }
}

namespace {

ErrorCode load_code(const std::string& raw) {
    try {
        deserialize_index(raw);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::io;
}

}  // namespace

TEST(Persistence, DetectsCorruption) {
    const auto raw = serialize_index(build_ivf(random_table(100, 4, 16), 4, KMeansConfig{}));
    auto bad_magic = raw;
    bad_magic[1] = 'Q';
    EXPECT_EQ(load_code(bad_magic), ErrorCode::corrupt);

    auto bad_version = raw;
    bad_version[4] = 7;
    EXPECT_EQ(load_code(bad_version), ErrorCode::unsupported_version);

    auto flipped = raw;
    flipped[raw.size() / 2] = static_cast<char>(flipped[raw.size() / 2] ^ 0x5a);
    EXPECT_EQ(load_code(flipped), ErrorCode::corrupt);

    EXPECT_EQ(load_code(raw.substr(0, raw.size() - 9)), ErrorCode::corrupt);
    EXPECT_EQ(load_code(raw.substr(0, 6)), ErrorCode::corrupt);
    EXPECT_EQ(load_code(""), ErrorCode::corrupt);
}
