#include <spr/binary.hpp>
#include <spr/embedding.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

using namespace spr;

namespace {

// Independent FNV-1a reference: byte-at-a-time over seed bytes then token.
std::uint64_t fnv_reference(std::uint64_t seed, const std::string& token) {
    std::string bytes(8, '\0');
    for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((seed >> (8 * i)) & 0xff);
    bytes += token;
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<float> random_vector(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<float> n;
    std::vector<float> v(d);
    for (auto& x : v) x = n(rng);
    return v;
}

}  // namespace

TEST(Normalize, UnitNormAfterwards) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        auto v = random_vector(rng, 17);
        const auto u = normalize(v);
        EXPECT_NEAR(l2_norm(u), 1.0, 1e-6);
    }
}

TEST(Normalize, RejectsZeroAndNonFinite) {
    std::vector<float> zero(4, 0.0f);
    EXPECT_THROW(normalize(zero), Error);
    std::vector<float> bad{1.0f, NAN};
    EXPECT_THROW(normalize(bad), Error);
}

TEST(Cosine, Basics) {
    const std::vector<float> a{1, 0, 0}, b{0, 1, 0}, c{2, 0, 0}, d{-1, 0, 0};
    EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, c), 1.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, d), -1.0);
    const std::vector<float> e{1, 1};
    EXPECT_THROW(cosine_similarity(a, e), Error);
}

TEST(Tokenize, LowercaseAlnumRuns) {
    EXPECT_EQ(tokenize("Two men, ARGUE!  x2"), (std::vector<std::string>{"two", "men", "argue", "x2"}));
    EXPECT_TRUE(tokenize("  ,.; ").empty());
}

TEST(ToyEmbedder, HashMatchesReference) {
    for (std::uint64_t seed : {0ull, 1ull, 0xdeadbeefull, ~0ull}) {
        for (const char* tok : {"", "a", "argue", "moment42"}) {
            EXPECT_EQ(fnv1a_seeded(seed, tok), fnv_reference(seed, tok));
        }
    }
}

TEST(ToyEmbedder, FeatureHashingOracle) {
    const std::size_t d = 16;
    const std::uint64_t seed = 5;
    const auto v = embed_text_toy("Two men argue, two", d, seed);
    std::vector<double> expect(d, 0.0);
    for (const char* tok : {"two", "men", "argue", "two"}) {
        const auto h = fnv_reference(seed, tok);
        expect[h % d] += (h >> 63) ? -1.0 : 1.0;
    }
    double n = 0.0;
    for (double x : expect) n += x * x;
    n = std::sqrt(n);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(v[i], expect[i] / n, 1e-7);
}

TEST(ToyEmbedder, DeterministicAndSeeded) {
    EXPECT_EQ(embed_text_toy("a b c", 32, 1), embed_text_toy("A, b. C", 32, 1));
    EXPECT_NE(embed_text_toy("a b c", 32, 1), embed_text_toy("a b c", 32, 2));
    EXPECT_THROW(embed_text_toy("   ", 32, 1), Error);
}

TEST(EmbeddingTable, AddSealLookup) {
    EmbeddingTable t(3);
    t.add("a", std::vector<float>{3, 0, 4});
    t.add("b", std::vector<float>{0, 1, 0});
    EXPECT_THROW(t.add("a", std::vector<float>{1, 1, 1}), Error);
    EXPECT_THROW(t.add("c", std::vector<float>{1, 1}), Error);
    EXPECT_EQ(t.seal(), 1u);
    EXPECT_TRUE(t.sealed());
    EXPECT_THROW(t.add("d", std::vector<float>{1, 1, 1}), Error);
    ASSERT_TRUE(t.find("a").has_value());
    EXPECT_FLOAT_EQ(t.row(*t.find("a"))[0], 0.6f);
    EXPECT_FLOAT_EQ(t.row(*t.find("a"))[2], 0.8f);
    EXPECT_FALSE(t.find("zz").has_value());
}

TEST(MatrixFile, RoundTrip) {
    EmbeddingTable t(4);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 10; ++i) t.add("r" + std::to_string(i), random_vector(rng, 4));
    t.seal();
    std::stringstream m, ids;
    write_table(m, ids, t);
    std::ostringstream log;
    const auto back = load_embeddings(m, ids, &log);
    EXPECT_EQ(back, t);
    EXPECT_TRUE(log.str().empty());
}

TEST(MatrixFile, WarnsOnRenormalization) {
    std::stringstream m, ids;
    const std::vector<float> data{2, 0, 0, 1};
    write_matrix(m, data, 2);
    write_id_manifest(ids, {"x", "y"});
    std::ostringstream log;
    const auto t = load_embeddings(m, ids, &log);
    EXPECT_NE(log.str().find("renormalized 1"), std::string::npos);
    EXPECT_FLOAT_EQ(t.row(0)[0], 1.0f);
}

namespace {

std::string matrix_bytes(std::uint32_t version, std::uint32_t dim, std::uint64_t count, std::vector<float> data) {
    BinaryWriter w;
    w.bytes("SPRB");
    w.u32(version);
    w.u32(dim);
    w.u64(count);
    w.f32s(data);
    return w.take();
}

ErrorCode read_code(const std::string& raw) {
    std::istringstream in(raw);
    try {
        read_matrix(in);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::io;
}

}  // namespace

TEST(MatrixFile, RejectsCorruption) {
    auto good = matrix_bytes(1, 2, 2, {1, 0, 0, 1});
    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(read_code(bad_magic), ErrorCode::corrupt);
    EXPECT_EQ(read_code(matrix_bytes(2, 2, 2, {1, 0, 0, 1})), ErrorCode::unsupported_version);
    EXPECT_EQ(read_code(matrix_bytes(1, 0, 0, {})), ErrorCode::validation);
    EXPECT_EQ(read_code(matrix_bytes(1, 2, 3, {1, 0, 0, 1})), ErrorCode::corrupt);
    EXPECT_EQ(read_code(matrix_bytes(1, 2, 2, {1, NAN, 0, 1})), ErrorCode::validation);
    EXPECT_EQ(read_code("SP"), ErrorCode::corrupt);
}

TEST(MatrixFile, IdManifestMismatch) {
    std::stringstream m, ids;
    write_matrix(m, std::vector<float>{1, 0, 0, 1}, 2);
    write_id_manifest(ids, {"only-one"});
    EXPECT_THROW(load_embeddings(m, ids, nullptr), Error);
}

TEST(FrameStore, SliceAndRange) {
    FrameStore fs(2);
    std::vector<float> frames;
    for (int t = 0; t < 10; ++t) {
        frames.push_back(static_cast<float>(t + 1));
        frames.push_back(1.0f);
    }
    fs.add_video("v", frames);
    std::size_t first = 99;
    const auto s = fs.slice("v", 2.0, 5.0, &first);
    EXPECT_EQ(first, 2u);
    EXPECT_EQ(s.rows, 3u);
    const auto partial = fs.slice("v", 8.5, 10.2, &first);
    EXPECT_EQ(first, 8u);
    EXPECT_EQ(partial.rows, 2u);
    EXPECT_NEAR(l2_norm(s.row(0)), 1.0, 1e-6);
    EXPECT_THROW(fs.frames("w"), Error);
}

TEST(FrameStore, RoundTripAndValidate) {
    FrameStore fs(3);
    std::mt19937_64 rng(2);
    fs.add_video("a", random_vector(rng, 3 * 5));
    fs.add_video("b", random_vector(rng, 3 * 2));
    std::stringstream m, ids;
    write_frame_store(m, ids, fs);
    const auto back = load_frame_store(m, ids);
    EXPECT_EQ(back, fs);

    Corpus c;
    c.register_video("a", 4.5);
    c.register_video("b", 2.0);
    EXPECT_NO_THROW(back.validate(c));
    Corpus wrong;
    wrong.register_video("a", 6.0);
    EXPECT_THROW(back.validate(wrong), Error);
}

TEST(MilNce, SinglePositiveBatchOfOne) {
    const std::vector<double> sim{0.37};
    EXPECT_EQ(mil_nce_loss(sim, 1, {{0, 0}}), 0.0);
}

TEST(MilNce, IdentityDiagonal) {
    const std::vector<double> sim{1, 0, 0, 1};
    // Each row and column: -log(e / (e + 1)) = log(1 + e^-1).
    const double oracle = std::log1p(std::exp(-1.0));
    EXPECT_NEAR(mil_nce_loss(sim, 2, {{0, 0}, {1, 1}}), oracle, 1e-12);
    EXPECT_NEAR(oracle, 0.31326169, 1e-8);
}

TEST(MilNce, MultiplePositivesOracle) {
    const std::vector<double> sim{0.9, 0.8, 0.1, 0.2, 0.3, 0.7, 0.0, 0.5, 0.6};
    const PositivePairSet pos{{0, 0}, {0, 1}, {1, 2}, {2, 1}, {2, 2}};
    double q2s = 0.0, s2q = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double num = 0.0, den = 0.0, cnum = 0.0, cden = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            den += std::exp(sim[i * 3 + j]);
            cden += std::exp(sim[j * 3 + i]);
            if (pos.contains({i, j})) num += std::exp(sim[i * 3 + j]);
            if (pos.contains({j, i})) cnum += std::exp(sim[j * 3 + i]);
        }
        q2s += -std::log(num / den);
        s2q += -std::log(cnum / cden);
    }
    EXPECT_NEAR(mil_nce_loss(sim, 3, pos), 0.5 * (q2s / 3 + s2q / 3), 1e-12);
}

TEST(MilNce, RejectsRowWithoutPositive) {
    const std::vector<double> sim{1, 0, 0, 1};
    EXPECT_THROW(mil_nce_loss(sim, 2, {{0, 0}}), Error);
    EXPECT_THROW(mil_nce_loss(sim, 3, {{0, 0}}), Error);
}
