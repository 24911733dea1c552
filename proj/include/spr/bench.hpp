#pragma once

#include <spr/evaluation.hpp>
#include <spr/index.hpp>
#include <spr/pipeline.hpp>
#include <spr/synthetic.hpp>

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace spr {

/// Per-query run records for both stages plus summed stage timings.
struct QueryRun {
    std::vector<RunRecord> coarse;
    std::vector<RunRecord> fine;
    std::vector<std::vector<Segment>> retrieved;  // parallel to coarse
    StageTimings total;
    std::size_t queries = 0;
};

/// Runs every annotated query whose embedding is present in `queries`
/// (looked up by decimal query id). Query-embedding time is measured on
/// the toy embedder over the query text.
inline QueryRun run_annotated_queries(const SearchContext& ctx, const EmbeddingTable& queries,
                                      const AnnotationSet& annotations, const PipelineConfig& cfg,
                                      bool with_refinement) {
    QueryRun out;
    for (const auto& [qid, ann] : annotations.entries()) {
        const auto row = queries.find(std::to_string(qid));
        if (!row) continue;
        const auto t0 = std::chrono::steady_clock::now();
        const Embedding text_emb = embed_text_toy(ann.query, queries.dim(), cfg.embed_seed);
        const double embed_s = detail::seconds_since(t0);
        (void)text_emb;

        PipelineResult r = run_pipeline(queries.row(*row), ctx, cfg, with_refinement);
        r.timings.query_embed_s = embed_s;
        out.total.query_embed_s += r.timings.query_embed_s;
        out.total.segment_retrieval_s += r.timings.segment_retrieval_s;
        out.total.proposal_generation_s += r.timings.proposal_generation_s;
        out.total.refine_rerank_s += r.timings.refine_rerank_s;
        ++out.queries;

        out.coarse.push_back(RunRecord{qid, Stage::coarse, std::move(r.coarse)});
        if (with_refinement) out.fine.push_back(RunRecord{qid, Stage::fine, std::move(r.fine)});
        std::vector<Segment> segs;
        segs.reserve(r.segments.size());
        for (auto& s : r.segments) segs.push_back(std::move(s.segment));
        out.retrieved.push_back(std::move(segs));
    }
    return out;
}

struct BenchConfig {
    SyntheticBenchConfig base;
    std::vector<std::size_t> sizes{1, 2, 4};  // corpus scale factors; extra videos are distractors
    std::vector<IndexKind> kinds{IndexKind::flat, IndexKind::ivf};
    std::size_t repetitions = 1;
    std::size_t top_k_segments = 200;
    std::size_t nprobe = 8;
    IndexBuildParams index;
    EvalConfig eval;
    std::vector<std::size_t> k_sweep{100, 200, 300, 400, 500};
    bool run_sweep = true;
    std::size_t parallelism = 1;

    BenchConfig() { index.kmeans.max_iters = 10; }
};

struct BenchRow {
    std::string corpus;
    std::size_t num_videos = 0;
    std::size_t num_segments = 0;
    IndexKind index = IndexKind::flat;
    std::size_t nlist = 0;
    std::vector<EvalCell> ndcg_cells;  // coarse stage
    StageTimings mean;                 // per query
    double build_time_s = 0.0;

    double retrieval_time_s() const { return mean.segment_retrieval_s; }
};

struct SweepRow {
    std::size_t k = 0;
    std::vector<EvalCell> coarse;
    std::vector<EvalCell> fine;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::vector<SweepRow> sweep;
    std::size_t repetitions = 1;
    std::size_t parallelism = 1;
    std::size_t num_queries = 0;
};

inline SyntheticBenchConfig scaled_config(const SyntheticBenchConfig& base, std::size_t scale) {
    require(scale >= 1, ErrorCode::invalid_argument, "corpus scale must be at least 1");
    SyntheticBenchConfig cfg = base;
    cfg.distractor_multiplier = (base.distractor_multiplier + 1) * scale - 1;
    return cfg;
}

inline PipelineConfig bench_pipeline_config(const BenchConfig& cfg, std::size_t top_k) {
    PipelineConfig p;
    p.retrieval.top_k_segments = top_k;
    p.retrieval.nprobe = cfg.nprobe;
    p.embed_seed = cfg.base.embed_seed;
    return p;
}

/// Per (size, index kind): mean per-stage wall clock of the coarse path and
/// the coarse-stage NDCG grid.
inline std::vector<BenchRow> bench_latency(const BenchConfig& cfg) {
    require(cfg.repetitions >= 1, ErrorCode::invalid_argument, "repetitions must be at least 1");
    std::vector<BenchRow> rows;
    for (std::size_t scale : cfg.sizes) {
        SyntheticBenchConfig sc = scaled_config(cfg.base, scale);
        sc.keep_frames = false;
        const SyntheticBundle bundle = generate_synthetic_corpus(sc);
        for (IndexKind kind : cfg.kinds) {
            IndexBuildParams ip = cfg.index;
            ip.kind = kind;
            const auto t0 = std::chrono::steady_clock::now();
            const VectorIndex index = build_index(bundle.segment_embeddings, ip);
            BenchRow row;
            row.build_time_s = detail::seconds_since(t0);
            row.corpus = "synthetic-x" + std::to_string(scale);
            row.num_videos = bundle.corpus.size();
            row.num_segments = bundle.segments.size();
            row.index = kind;
            row.nlist = nlist_of(index);

            const SearchContext ctx{bundle.corpus, bundle.segments, index, nullptr};
            const PipelineConfig pc = bench_pipeline_config(cfg, cfg.top_k_segments);
            StageTimings sum;
            std::size_t runs = 0;
            for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
                QueryRun qr = run_annotated_queries(ctx, bundle.query_embeddings, bundle.annotations, pc, false);
                if (rep == 0) {
                    row.ndcg_cells = evaluate_run(qr.coarse, bundle.annotations, cfg.eval, Stage::coarse).cells;
                }
                sum.query_embed_s += qr.total.query_embed_s;
                sum.segment_retrieval_s += qr.total.segment_retrieval_s;
                sum.proposal_generation_s += qr.total.proposal_generation_s;
                runs += qr.queries;
            }
            if (runs > 0) {
                const auto n = static_cast<double>(runs);
                row.mean.query_embed_s = sum.query_embed_s / n;
                row.mean.segment_retrieval_s = sum.segment_retrieval_s / n;
                row.mean.proposal_generation_s = sum.proposal_generation_s / n;
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

/// NDCG grids of both stages for each retrieved-segment count k, on the
/// base corpus with a flat index.
inline std::vector<SweepRow> bench_k_sweep(const BenchConfig& cfg) {
    SyntheticBenchConfig sc = cfg.base;
    sc.keep_frames = true;
    const SyntheticBundle bundle = generate_synthetic_corpus(sc);
    const VectorIndex index = build_flat(bundle.segment_embeddings);
    const SearchContext ctx{bundle.corpus, bundle.segments, index, &bundle.frames};
    std::vector<SweepRow> rows;
    for (std::size_t k : cfg.k_sweep) {
        const QueryRun qr =
            run_annotated_queries(ctx, bundle.query_embeddings, bundle.annotations, bench_pipeline_config(cfg, k), true);
        rows.push_back(SweepRow{k, evaluate_run(qr.coarse, bundle.annotations, cfg.eval, Stage::coarse).cells,
                                evaluate_run(qr.fine, bundle.annotations, cfg.eval, Stage::fine).cells});
    }
    return rows;
}

inline BenchReport run_bench(const BenchConfig& cfg) {
    BenchReport report;
    report.repetitions = cfg.repetitions;
    report.parallelism = cfg.parallelism;
    report.num_queries = cfg.base.num_queries;
    report.rows = bench_latency(cfg);
    if (cfg.run_sweep) report.sweep = bench_k_sweep(cfg);
    return report;
}

inline json bench_to_json(const BenchReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"corpus", row.corpus},
                        {"num_videos", row.num_videos},
                        {"num_segments", row.num_segments},
                        {"index", std::string(to_string(row.index))},
                        {"nlist", row.nlist},
                        {"ndcg_cells", cells_to_json(row.ndcg_cells)},
                        {"retrieval_time_s", row.retrieval_time_s()},
                        {"query_embed_time_s", row.mean.query_embed_s},
                        {"proposal_time_s", row.mean.proposal_generation_s},
                        {"total_time_s", row.mean.total()},
                        {"build_time_s", row.build_time_s}});
    }
    json sweep = json::array();
    for (const auto& s : r.sweep) {
        sweep.push_back({{"k", s.k}, {"coarse", cells_to_json(s.coarse)}, {"fine", cells_to_json(s.fine)}});
    }
    return json{{"repetitions", r.repetitions},
                {"parallelism", r.parallelism},
                {"num_queries", r.num_queries},
                {"rows", std::move(rows)},
                {"k_sweep", std::move(sweep)}};
}

}  // namespace spr
