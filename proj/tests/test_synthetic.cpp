#include <spr/synthetic.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace spr;

namespace {

SyntheticBenchConfig small_config() {
    SyntheticBenchConfig cfg;
    cfg.num_videos = 12;
    cfg.num_queries = 5;
    cfg.moments_per_query = 2;
    cfg.embedding_dim = 32;
    return cfg;
}

std::string serialize(const SyntheticBundle& b) {
    std::ostringstream out;
    write_table(out, out, b.segment_embeddings);
    write_table(out, out, b.query_embeddings);
    write_frame_store(out, out, b.frames);
    write_annotations(out, b.annotations);
    write_video_manifest(out, b.corpus);
    write_segment_manifest(out, b.segments);
    return out.str();
}

}  // namespace

TEST(Synthetic, ByteIdenticalForEqualSeeds) {
    const auto a = generate_synthetic_corpus(small_config());
    const auto b = generate_synthetic_corpus(small_config());
    EXPECT_EQ(serialize(a), serialize(b));
    auto other = small_config();
    other.seed = 8;
    EXPECT_NE(serialize(generate_synthetic_corpus(other)), serialize(a));
}

TEST(Synthetic, ShapeAndCounts) {
    const auto b = generate_synthetic_corpus(small_config());
    EXPECT_EQ(b.corpus.size(), 12u);
    EXPECT_EQ(b.segments.size(), 12u * 19u);
    EXPECT_EQ(b.segment_embeddings.size(), b.segments.size());
    EXPECT_EQ(b.query_embeddings.size(), 5u);
    EXPECT_EQ(b.annotations.size(), 5u);
    EXPECT_EQ(b.frames.num_videos(), 12u);
    EXPECT_NO_THROW(b.frames.validate(b.corpus));
    for (const auto& [qid, ann] : b.annotations.entries()) {
        ASSERT_EQ(ann.moments.size(), 2u);
        EXPECT_EQ(ann.moments[0].relevance, 4);
        for (const auto& m : ann.moments) {
            EXPECT_GE(m.moment.length(), 4.0);
            EXPECT_LE(m.moment.length(), 14.0);
            EXPECT_LE(m.moment.end_s, 76.0);
        }
    }
}

TEST(Synthetic, PlantedMomentsDoNotOverlap) {
    auto cfg = small_config();
    cfg.num_queries = 20;
    cfg.moments_per_query = 3;
    const auto b = generate_synthetic_corpus(cfg);
    std::vector<Moment> all;
    for (const auto& [qid, ann] : b.annotations.entries()) {
        for (const auto& m : ann.moments) all.push_back(m.moment);
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            if (all[i].video_id != all[j].video_id) continue;
            EXPECT_TRUE(all[i].end_s <= all[j].start_s || all[j].end_s <= all[i].start_s);
        }
    }
}

TEST(Synthetic, ZeroNoiseFramesEqualQuery) {
    auto cfg = small_config();
    cfg.set_zero_noise();
    const auto b = generate_synthetic_corpus(cfg);
    for (const auto& [qid, ann] : b.annotations.entries()) {
        const auto q = b.query_embeddings.row(*b.query_embeddings.find(std::to_string(qid)));
        const auto& gt = ann.moments[0].moment;
        const auto frames = b.frames.slice(gt.video_id, gt.start_s, gt.end_s);
        ASSERT_EQ(frames.rows, static_cast<std::size_t>(gt.length()));
        for (std::size_t t = 0; t < frames.rows; ++t) EXPECT_NEAR(cosine_similarity(q, frames.row(t)), 1.0, 1e-6);
    }
}

TEST(Synthetic, ZeroNoisePlantedSegmentsAreArgmax) {
    auto cfg = small_config();
    cfg.moments_per_query = 1;
    cfg.set_zero_noise();
    const auto b = generate_synthetic_corpus(cfg);
    for (const auto& [qid, ann] : b.annotations.entries()) {
        const auto q = b.query_embeddings.row(*b.query_embeddings.find(std::to_string(qid)));
        const auto& gt = ann.moments[0].moment;
        double best = -2.0;
        std::string best_id;
        for (std::size_t i = 0; i < b.segment_embeddings.size(); ++i) {
            const double s = dot(q, b.segment_embeddings.row(i));
            if (s > best) {
                best = s;
                best_id = b.segment_embeddings.id(i);
            }
        }
        const Segment* s = b.segments.find(best_id);
        ASSERT_NE(s, nullptr);
        EXPECT_EQ(s->video_id, gt.video_id);
        EXPECT_GT(segment_overlap_fraction(*s, gt), 0.0);
    }
}

TEST(Synthetic, NoiseOrdersRelevance) {
    auto cfg = small_config();
    cfg.num_queries = 20;
    cfg.moments_per_query = 4;
    cfg.num_videos = 40;
    const auto b = generate_synthetic_corpus(cfg);
    std::map<int, std::pair<double, int>> by_rel;
    for (const auto& [qid, ann] : b.annotations.entries()) {
        const auto q = b.query_embeddings.row(*b.query_embeddings.find(std::to_string(qid)));
        for (const auto& m : ann.moments) {
            const auto frames = b.frames.slice(m.moment.video_id, m.moment.start_s, m.moment.end_s);
            for (std::size_t t = 0; t < frames.rows; ++t) {
                by_rel[m.relevance].first += cosine_similarity(q, frames.row(t));
                ++by_rel[m.relevance].second;
            }
        }
    }
    double prev = 2.0;
    for (int r = 4; r >= 1; --r) {
        if (!by_rel.contains(r)) continue;
        const double mean = by_rel[r].first / by_rel[r].second;
        EXPECT_LT(mean, prev);
        prev = mean;
    }
}

TEST(Synthetic, DistractorsMultiplySegmentsAndAreOrthogonal) {
    auto cfg = small_config();
    cfg.distractor_multiplier = 10;
    cfg.set_zero_noise();
    const auto base = generate_synthetic_corpus(small_config());
    const auto b = generate_synthetic_corpus(cfg);
    EXPECT_EQ(b.segments.size(), 11 * base.segments.size());
    for (const auto& [qid, ann] : b.annotations.entries()) {
        const auto q = b.query_embeddings.row(*b.query_embeddings.find(std::to_string(qid)));
        for (std::size_t i = 0; i < b.segment_embeddings.size(); ++i) {
            if (b.segment_embeddings.id(i)[0] != 'd') continue;
            EXPECT_NEAR(dot(q, b.segment_embeddings.row(i)), 0.0, 1e-5);
        }
    }
}

TEST(Synthetic, DistractorsLeaveBaseCorpusUnchanged) {
    auto cfg = small_config();
    const auto base = generate_synthetic_corpus(cfg);
    cfg.distractor_multiplier = 2;
    const auto b = generate_synthetic_corpus(cfg);
    EXPECT_EQ(b.annotations, base.annotations);
    for (std::size_t i = 0; i < base.segment_embeddings.size(); ++i) {
        const auto row = b.segment_embeddings.find(base.segment_embeddings.id(i));
        ASSERT_TRUE(row.has_value());
        const auto x = b.segment_embeddings.row(*row);
        const auto y = base.segment_embeddings.row(i);
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
}

TEST(Synthetic, InvalidConfig) {
    auto cfg = small_config();
    cfg.num_videos = 0;
    EXPECT_THROW(generate_synthetic_corpus(cfg), Error);
    cfg = small_config();
    cfg.relevance_noise[4] = 0.9;
    EXPECT_THROW(generate_synthetic_corpus(cfg), Error);
    cfg = small_config();
    cfg.max_moment_s = 100;
    EXPECT_THROW(generate_synthetic_corpus(cfg), Error);
    cfg = small_config();
    cfg.num_videos = 1;
    cfg.num_queries = 30;
    EXPECT_THROW(generate_synthetic_corpus(cfg), Error);
}
