#include <spr/evaluation.hpp>
#include <spr/synthetic.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

using namespace spr;

namespace {

// ---- independent oracle -------------------------------------------------

double oracle_iou(const Moment& a, const Moment& b) {
    if (a.video_id != b.video_id) return 0.0;
    if (a.end_s <= b.start_s || b.end_s <= a.start_s) return 0.0;
    const double inter = std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s);
    return inter / (std::max(a.end_s, b.end_s) - std::min(a.start_s, b.start_s));
}

double oracle_ndcg(const std::vector<Moment>& preds, const std::vector<GroundTruthMoment>& gts, int k, double mu) {
    std::vector<int> ideal;
    for (const auto& g : gts) ideal.push_back(g.relevance);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    auto dcg = [k](const std::vector<int>& rels) {
        double s = 0.0;
        for (int i = 0; i < static_cast<int>(rels.size()) && i < k; ++i) {
            s += (std::pow(2.0, rels[i]) - 1.0) * std::log(2.0) / std::log(i + 2.0);
        }
        return s;
    };
    const double idcg = dcg(ideal);
    if (idcg == 0.0) return 0.0;
    std::vector<bool> taken(gts.size(), false);
    std::vector<int> got;
    for (const auto& p : preds) {
        struct Cand {
            int rel;
            double iou;
            double start;
            std::size_t g;
        };
        std::vector<Cand> cands;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = oracle_iou(p, gts[g].moment);
            if (!taken[g] && v >= mu) cands.push_back({gts[g].relevance, v, gts[g].moment.start_s, g});
        }
        if (cands.empty()) {
            got.push_back(0);
            continue;
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.rel != b.rel) return a.rel > b.rel;
            if (a.iou != b.iou) return a.iou > b.iou;
            return a.start < b.start;
        });
        taken[cands[0].g] = true;
        got.push_back(cands[0].rel);
    }
    return dcg(got) / idcg;
}

Moment random_moment(std::mt19937_64& rng) {
    const std::string v = (rng() % 3 == 0) ? "w" : "v";
    const double start = 0.5 * static_cast<double>(rng() % 40);
    const double len = 0.5 * static_cast<double>(1 + rng() % 16);
    return Moment{v, start, start + len};
}

}  // namespace

TEST(Iou, Examples) {
    EXPECT_NEAR(iou(Moment{"v", 0, 4}, Moment{"v", 2, 6}), 2.0 / 6.0, 1e-12);
    EXPECT_NEAR(iou(Moment{"v", 0, 4}, Moment{"v", 2, 6}), 0.33333333, 1e-8);
    EXPECT_DOUBLE_EQ(iou(Moment{"v", 3, 9}, Moment{"v", 3, 9}), 1.0);
    EXPECT_DOUBLE_EQ(iou(Moment{"v", 0, 4}, Moment{"w", 0, 4}), 0.0);
    EXPECT_DOUBLE_EQ(iou(Moment{"v", 0, 4}, Moment{"v", 4, 8}), 0.0);
}

TEST(Match, ExclusionRule) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 0, 10}, 4}};
    const auto r = match_predictions({Moment{"v", 0, 10}, Moment{"v", 1, 10}}, gts, 0.5);
    EXPECT_EQ(r.relevance, (std::vector<int>{4, 0}));
    ASSERT_TRUE(r.gt[0].has_value());
    EXPECT_FALSE(r.gt[1].has_value());
}

TEST(Match, StrictThresholdBoundary) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 0, 10}, 3}};
    // IoU of [0,5) with [0,10) is exactly 0.5.
    EXPECT_EQ(match_predictions({Moment{"v", 0, 5}}, gts, 0.5).relevance[0], 3);
    EXPECT_EQ(match_predictions({Moment{"v", 0, 4.999}}, gts, 0.5).relevance[0], 0);
}

TEST(Match, PrefersHighestRelevance) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 0, 10}, 2}, {Moment{"v", 1, 11}, 4}};
    const std::vector<Moment> preds{Moment{"v", 0, 10}};
    const auto r = match_predictions(preds, gts, 0.5);
    EXPECT_EQ(r.relevance[0], 4);
    // Brute force over admissible single assignments: the best gain is rel 4.
    int best = 0;
    for (const auto& g : gts) {
        if (oracle_iou(preds[0], g.moment) >= 0.5) best = std::max(best, g.relevance);
    }
    EXPECT_EQ(r.relevance[0], best);
}

TEST(Match, TieBreaksOnIouThenStart) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 2, 10}, 3}, {Moment{"v", 0, 8}, 3}, {Moment{"v", 0, 9}, 3}};
    const auto r = match_predictions({Moment{"v", 0, 8}}, gts, 0.3);
    EXPECT_EQ(*r.gt[0], 1u);
    const std::vector<GroundTruthMoment> sym{{Moment{"v", 2, 6}, 2}, {Moment{"v", 0, 4}, 2}};
    EXPECT_EQ(*match_predictions({Moment{"v", 1, 5}}, sym, 0.3).gt[0], 1u);
}

TEST(Dcg, Examples) {
    EXPECT_DOUBLE_EQ(dcg_at_k({4}, 1), 15.0);
    EXPECT_DOUBLE_EQ(dcg_at_k({4}, 10), 15.0);
    EXPECT_NEAR(dcg_at_k({4, 3, 0}, 3), 15.0 + 7.0 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(dcg_at_k({4, 3, 0}, 3), 19.41650, 1e-4);
    EXPECT_DOUBLE_EQ(dcg_at_k({0, 0, 0}, 3), 0.0);
    EXPECT_THROW(dcg_at_k({1}, 0), Error);
}

TEST(Dcg, AppendingNeverDecreases) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
        std::vector<int> rels;
        double prev = 0.0;
        for (int i = 0; i < 12; ++i) {
            rels.push_back(static_cast<int>(rng() % 5));
            const double d = dcg_at_k(rels, 10);
            EXPECT_GE(d, prev);
            prev = d;
        }
    }
}

TEST(Ndcg, PerfectAndEmpty) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 0, 8}, 2}, {Moment{"v", 20, 30}, 4}, {Moment{"w", 5, 9}, 1}};
    EXPECT_DOUBLE_EQ(ndcg_at_k({Moment{"v", 20, 30}, Moment{"v", 0, 8}, Moment{"w", 5, 9}}, gts, 10, 0.7), 1.0);
    EXPECT_DOUBLE_EQ(ndcg_at_k({Moment{"x", 0, 8}}, gts, 10, 0.3), 0.0);
    EXPECT_DOUBLE_EQ(ndcg_at_k({}, gts, 10, 0.3), 0.0);
    EXPECT_DOUBLE_EQ(ndcg_at_k({Moment{"v", 0, 8}}, {}, 10, 0.3), 0.0);
}

TEST(Ndcg, MatchesOracleOnRandomInstances) {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 500; ++t) {
        std::vector<Moment> preds;
        std::vector<GroundTruthMoment> gts;
        const auto np = rng() % 6, ng = rng() % 6;
        for (std::size_t i = 0; i < np; ++i) preds.push_back(random_moment(rng));
        for (std::size_t i = 0; i < ng; ++i) gts.push_back({random_moment(rng), static_cast<int>(1 + rng() % 4)});
        for (int k : {1, 3, 10}) {
            for (double mu : {0.3, 0.5, 0.7}) {
                const double v = ndcg_at_k(preds, gts, k, mu);
                EXPECT_NEAR(v, oracle_ndcg(preds, gts, k, mu), 1e-9);
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0 + 1e-12);
            }
        }
    }
}

TEST(Ndcg, ErasingAMatchCanRaiseScore) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 0, 4}, 1}, {Moment{"v", 10, 14}, 4}};
    const double both = ndcg_at_k({Moment{"v", 0, 4}, Moment{"v", 10, 14}}, gts, 5, 0.5);
    EXPECT_GT(ndcg_at_k({Moment{"v", 10, 14}}, gts, 5, 0.5), both);
}

TEST(Ndcg, Properties) {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 200; ++t) {
        std::vector<Moment> preds;
        std::vector<GroundTruthMoment> gts;
        for (int i = 0; i < 5; ++i) preds.push_back(random_moment(rng));
        for (int i = 0; i < 4; ++i) gts.push_back({random_moment(rng), static_cast<int>(1 + rng() % 4)});
        const double base = ndcg_at_k(preds, gts, 5, 0.3);
        // A non-matching prediction below rank K changes nothing.
        auto extended = preds;
        extended.push_back(Moment{"nowhere", 0, 1});
        EXPECT_DOUBLE_EQ(ndcg_at_k(extended, gts, 5, 0.3), base);
        // Blanking a matched prediction never increases NDCG. Erasing it
        // outright can, since later matches move up a rank.
        const auto m = match_predictions(preds, gts, 0.3);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (!m.gt[i]) continue;
            auto blanked = preds;
            blanked[i] = Moment{"nowhere", 0, 1};
            EXPECT_LE(ndcg_at_k(blanked, gts, 5, 0.3), base + 1e-12);
        }
        std::set<std::size_t> used;
        int max_rel = 0;
        for (const auto& g : gts) max_rel = std::max(max_rel, g.relevance);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            EXPECT_LE(m.relevance[i], max_rel);
            if (m.gt[i]) {
                EXPECT_TRUE(used.insert(*m.gt[i]).second);
            }
        }
    }
}

// ---- bounds ----------------------------------------------------------------

TEST(UpperBound, Examples) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 14, 19}, 4}};
    EXPECT_DOUBLE_EQ(upper_bound_ndcg({Moment{"v", 4, 28}}, gts, 10), 1.0);
    EXPECT_DOUBLE_EQ(upper_bound_ndcg({Moment{"w", 4, 28}}, gts, 10), 0.0);
    EXPECT_DOUBLE_EQ(upper_bound_ndcg({Moment{"v", 19, 28}}, gts, 10), 0.0);
    // Partial containment still counts.
    EXPECT_DOUBLE_EQ(upper_bound_ndcg({Moment{"v", 18, 28}}, gts, 1), 1.0);
}

TEST(UpperBound, RanksByRelevance) {
    const std::vector<GroundTruthMoment> gts{
        {Moment{"v", 0, 4}, 1}, {Moment{"v", 40, 44}, 4}, {Moment{"v", 70, 74}, 3}};
    // GTs at 0 and 40 are reachable; ideal list is [4, 1] against ideal [4, 3, 1].
    const double expect = (15.0 + 1.0 / std::log2(3.0)) / (15.0 + 7.0 / std::log2(3.0) + 1.0 / std::log2(4.0));
    EXPECT_NEAR(upper_bound_ndcg({Moment{"v", 0, 12}, Moment{"v", 36, 50}}, gts, 10), expect, 1e-12);
}

TEST(PracticalBound, GridExample) {
    const GridCandidate c = best_grid_interval(Moment{"v", 0, 20}, Moment{"v", 0, 8.7}, 1.5);
    EXPECT_EQ(c.moment, (Moment{"v", 0, 9}));
    EXPECT_NEAR(c.iou, 8.7 / 9.0, 1e-12);
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 0, 8.7}, 4}};
    const std::vector<Moment> padded{Moment{"v", 0, 20}};
    EXPECT_DOUBLE_EQ(practical_upper_bound_ndcg(padded, gts, 10, 0.7, 1.5), upper_bound_ndcg(padded, gts, 10));
    // Best grid IoU 0.9667 fails a threshold of 0.97.
    EXPECT_DOUBLE_EQ(practical_upper_bound_ndcg(padded, gts, 10, 0.97, 1.5), 0.0);
}

TEST(PracticalBound, OnGridEqualsUpperBound) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 12, 18}, 4}, {Moment{"v", 30, 33}, 2}};
    const std::vector<Moment> padded{Moment{"v", 4, 40}};
    for (double mu : {0.3, 0.5, 0.7, 1.0}) {
        EXPECT_DOUBLE_EQ(practical_upper_bound_ndcg(padded, gts, 10, mu, 1.0), upper_bound_ndcg(padded, gts, 10));
    }
}

TEST(PracticalBound, ClampedToPaddedProposal) {
    const std::vector<GroundTruthMoment> gts{{Moment{"v", 10, 20}, 4}};
    const std::vector<Moment> padded{Moment{"v", 0, 15}};
    // Best in-proposal interval is [10,15): IoU 0.5.
    EXPECT_DOUBLE_EQ(practical_upper_bound_ndcg(padded, gts, 10, 0.5, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(practical_upper_bound_ndcg(padded, gts, 10, 0.7, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(upper_bound_ndcg(padded, gts, 10), 1.0);
}

TEST(PracticalBound, ScaleShrinkApproachesUpperBound) {
    const std::vector<GroundTruthMoment> gts{
        {Moment{"v", 0, 8.7}, 4}, {Moment{"v", 21.3, 27.9}, 3}, {Moment{"v", 41.1, 44.2}, 2}};
    const std::vector<Moment> padded{Moment{"v", 0, 60}};
    const double ub = upper_bound_ndcg(padded, gts, 10);
    double prev = -1.0;
    for (double scale : {4.0, 1.5, 1.0, 0.5}) {
        const double pub = practical_upper_bound_ndcg(padded, gts, 10, 0.7, scale);
        EXPECT_GE(pub, prev);
        EXPECT_LE(pub, ub);
        prev = pub;
    }
    EXPECT_DOUBLE_EQ(prev, ub);
}

TEST(PracticalBound, GridIncludesPaddedEnds) {
    const auto c = best_grid_interval(Moment{"v", 64, 76.2}, Moment{"v", 70, 76.2}, 4.0);
    EXPECT_EQ(c.moment, (Moment{"v", 68, 76.2}));
}

// ---- run files and reports ---------------------------------------------------

namespace {

AnnotationSet three_queries() {
    AnnotationSet a;
    a.add(QueryAnnotation{1, "one", {{Moment{"v", 0, 8}, 4}}});
    a.add(QueryAnnotation{2, "two", {{Moment{"v", 10, 20}, 3}, {Moment{"w", 0, 4}, 1}}});
    a.add(QueryAnnotation{3, "three", {{Moment{"w", 30, 40}, 2}}});
    return a;
}

RunRecord record(std::int64_t qid, Stage stage, const std::vector<Moment>& moments) {
    RunRecord r{qid, stage, {}};
    for (std::size_t i = 0; i < moments.size(); ++i) {
        r.results.push_back(RankedMoment{moments[i], 1.0 - 0.1 * static_cast<double>(i), i + 1, stage});
    }
    return r;
}

}  // namespace

TEST(EvaluateRun, PerfectRunIsOne) {
    const auto ann = three_queries();
    std::vector<RunRecord> run;
    for (const auto& [qid, q] : ann.entries()) {
        std::vector<GroundTruthMoment> sorted = q.moments;
        std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.relevance > b.relevance; });
        std::vector<Moment> m;
        for (const auto& g : sorted) m.push_back(g.moment);
        run.push_back(record(qid, Stage::fine, m));
    }
    const auto report = evaluate_run(run, ann, EvalConfig{});
    EXPECT_EQ(report.num_queries, 3u);
    ASSERT_EQ(report.cells.size(), 9u);
    for (const auto& c : report.cells) EXPECT_DOUBLE_EQ(c.ndcg, 1.0);
}

TEST(EvaluateRun, EmptyRunIsZero) {
    const auto report = evaluate_run({}, three_queries(), EvalConfig{});
    for (const auto& c : report.cells) EXPECT_DOUBLE_EQ(c.ndcg, 0.0);
}

TEST(EvaluateRun, MissingQueriesScoreZero) {
    const auto ann = three_queries();
    const auto report = evaluate_run({record(1, Stage::fine, {Moment{"v", 0, 8}})}, ann, EvalConfig{});
    EXPECT_NEAR(report.cell(10, 0.5), 1.0 / 3.0, 1e-12);
}

TEST(EvaluateRun, Errors) {
    const auto ann = three_queries();
    EXPECT_THROW(evaluate_run({record(99, Stage::fine, {})}, ann, EvalConfig{}), Error);
    const std::vector<RunRecord> both{record(1, Stage::fine, {}), record(1, Stage::coarse, {})};
    EXPECT_THROW(evaluate_run(both, ann, EvalConfig{}), Error);
    EXPECT_NO_THROW(evaluate_run(both, ann, EvalConfig{}, Stage::coarse));
    EvalConfig bad;
    bad.iou_thresholds = {0.0};
    EXPECT_THROW(evaluate_run({}, ann, bad), Error);
}

TEST(EvaluateRun, SortsByRank) {
    const auto ann = three_queries();
    RunRecord r = record(2, Stage::fine, {Moment{"v", 10, 20}, Moment{"w", 0, 4}});
    std::swap(r.results[0], r.results[1]);
    const auto report = evaluate_run({r}, ann, EvalConfig{{10}, {0.5}});
    EXPECT_NEAR(report.per_query[1].cells[0].ndcg, 1.0, 1e-12);
}

TEST(RunFile, RoundTripAndValidation) {
    const std::vector<RunRecord> run{record(1, Stage::coarse, {Moment{"v", 0, 4}, Moment{"v", 8, 12}}),
                                     record(2, Stage::fine, {})};
    std::stringstream s;
    write_run(s, run);
    const auto back = read_run(s);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].query_id, 1);
    EXPECT_EQ(back[0].stage, Stage::coarse);
    ASSERT_EQ(back[0].results.size(), 2u);
    EXPECT_EQ(back[0].results[1].moment, (Moment{"v", 8, 12}));
    EXPECT_EQ(back[0].results[1].rank, 2u);

    std::istringstream bad_stage(R"({"query_id": 1, "stage": "medium", "results": []})");
    EXPECT_THROW(read_run(bad_stage), Error);
    std::istringstream bad_rank(
        R"({"query_id": 1, "stage": "fine", "results": [{"video_id":"v","start_s":0,"end_s":1,"score":1,"rank":0}]})");
    EXPECT_THROW(read_run(bad_rank), Error);
    std::istringstream junk("{\"query_id\": 1, \"stage\": \"fine\", \"results\": []}\nnot json\n");
    try {
        read_run(junk, "run.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("run.jsonl:2"), std::string::npos);
    }
}

TEST(EvaluateRun, SyntheticMatchesHandAverage) {
    SyntheticBenchConfig cfg;
    cfg.num_queries = 20;
    cfg.moments_per_query = 3;
    const auto b = generate_synthetic_corpus(cfg);
    std::mt19937_64 rng(5);
    std::vector<RunRecord> run;
    std::map<std::int64_t, std::vector<Moment>> preds;
    for (const auto& [qid, ann] : b.annotations.entries()) {
        std::vector<Moment> m;
        for (const auto& g : ann.moments) {
            const double shift = static_cast<double>(rng() % 5) - 2.0;
            m.push_back(Moment{g.moment.video_id, std::max(0.0, g.moment.start_s + shift), g.moment.end_s + shift});
        }
        std::shuffle(m.begin(), m.end(), rng);
        preds[qid] = m;
        run.push_back(record(qid, Stage::fine, m));
    }
    const EvalConfig cfg_eval;
    const auto report = evaluate_run(run, b.annotations, cfg_eval);
    std::size_t c = 0;
    for (int k : cfg_eval.cutoffs) {
        for (double mu : cfg_eval.iou_thresholds) {
            double sum = 0.0;
            for (const auto& [qid, ann] : b.annotations.entries()) sum += oracle_ndcg(preds[qid], ann.moments, k, mu);
            EXPECT_NEAR(report.cells[c].ndcg, sum / 20.0, 1e-9);
            EXPECT_EQ(report.cells[c].k, k);
            ++c;
        }
    }
    const json doc = report_to_json(report);
    EXPECT_EQ(doc["num_queries"], 20);
    EXPECT_EQ(doc["cells"].size(), 9u);
    EXPECT_EQ(doc["per_query"].size(), 20u);
}

TEST(BoundReport, PadsWithCorpusDurations) {
    Corpus c;
    c.register_video("v", 30.0);
    c.seal();
    AnnotationSet a;
    a.add(QueryAnnotation{1, "q", {{Moment{"v", 24, 30}, 4}}});
    const std::map<std::int64_t, std::vector<Moment>> props{{1, {Moment{"v", 20, 24}}}};
    BoundConfig ub;
    EXPECT_DOUBLE_EQ(bound_report(props, a, c, EvalConfig{}, ub).cell(10, 0.7), 1.0);
    ub.context_padding_s = 0.0;
    EXPECT_DOUBLE_EQ(bound_report(props, a, c, EvalConfig{}, ub).cell(10, 0.7), 0.0);
    BoundConfig pub;
    pub.min_time_scale_s = 4.0;
    EXPECT_DOUBLE_EQ(bound_report(props, a, c, EvalConfig{}, pub).cell(10, 0.7), 1.0);
}

TEST(SegmentRecall, Examples) {
    AnnotationSet a;
    a.add(QueryAnnotation{1, "q", {{Moment{"v", 4, 12}, 4}, {Moment{"v", 40, 42}, 2}}});
    const Segment s1{"v#1", "v", 1, 4, 8}, s2{"v#2", "v", 2, 8, 12}, s10{"v#10", "v", 10, 40, 44};
    EXPECT_DOUBLE_EQ(segment_recall({{1, {s1, s10}}}, a, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(segment_recall({{1, {s1, s10}}}, a, 0.75), 0.5);
    EXPECT_DOUBLE_EQ(segment_recall({}, a, 0.5), 0.0);
    EXPECT_GE(segment_recall({{1, {s1, s2, s10}}}, a, 0.5), segment_recall({{1, {s1}}}, a, 0.5));
    EXPECT_THROW(segment_recall({}, a, 0.0), Error);
}
