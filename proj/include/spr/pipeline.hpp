#pragma once

#include <spr/corpus.hpp>
#include <spr/embedding.hpp>
#include <spr/error.hpp>
#include <spr/index.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spr {

struct RetrievalConfig {
    std::size_t top_k_segments = 200;
    std::size_t nprobe = 128;  // IVF variants only; clamped to nlist
};

struct ProposalConfig {
    double gap_tolerance_s = 0.0;
};

enum class RefinerKind { identity, similarity_profile };

inline std::string_view to_string(RefinerKind kind) {
    return kind == RefinerKind::identity ? "identity" : "similarity_profile";
}

inline RefinerKind parse_refiner_kind(std::string_view name) {
    if (name == "identity") return RefinerKind::identity;
    if (name == "similarity_profile") return RefinerKind::similarity_profile;
    fail(ErrorCode::invalid_argument, "unknown refiner '" + std::string(name) + "'");
}

struct RefineConfig {
    double context_padding_s = 8.0;
    double profile_alpha = 0.7;
    RefinerKind refiner = RefinerKind::similarity_profile;
};

struct RetrievedSegment {
    Segment segment;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based
};

/// A run of merged retrieved segments from one video.
struct Proposal {
    std::string video_id;
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<std::string> constituent_segment_ids;
    std::size_t best_segment_rank = 0;
    double best_segment_score = 0.0;

    Moment moment() const { return Moment{video_id, start_s, end_s}; }
};

enum class Stage { coarse, fine };

inline std::string_view to_string(Stage stage) { return stage == Stage::coarse ? "coarse" : "fine"; }

inline Stage parse_stage(std::string_view name) {
    if (name == "coarse") return Stage::coarse;
    if (name == "fine") return Stage::fine;
    fail(ErrorCode::invalid_argument, "unknown stage '" + std::string(name) + "'");
}

struct RankedMoment {
    Moment moment;
    double score = 0.0;
    std::size_t rank = 0;
    Stage stage = Stage::coarse;
};

/// Wall-clock seconds per stage.
struct StageTimings {
    double query_embed_s = 0.0;
    double segment_retrieval_s = 0.0;
    double proposal_generation_s = 0.0;
    double refine_rerank_s = 0.0;

    double total() const { return query_embed_s + segment_retrieval_s + proposal_generation_s + refine_rerank_s; }
};

struct PipelineConfig {
    RetrievalConfig retrieval;
    ProposalConfig proposal;
    RefineConfig refine;
    std::uint64_t embed_seed = 0;
};

/// Sealed artifacts a query runs against. `frames` may be null when only
/// the coarse stage is requested.
struct SearchContext {
    const Corpus& corpus;
    const SegmentCatalog& segments;
    const VectorIndex& index;
    const FrameStore* frames = nullptr;
};

struct PipelineResult {
    std::vector<RetrievedSegment> segments;
    std::vector<Proposal> proposals;  // unpadded, coarse order
    std::vector<RankedMoment> coarse;
    std::vector<RankedMoment> fine;
    StageTimings timings;
};

// ---------------------------------------------------------------------------
// Stage 1: segment retrieval

inline std::vector<RetrievedSegment> retrieve_segments(std::span<const float> query, const VectorIndex& index,
                                                       const SegmentCatalog& catalog, const RetrievalConfig& cfg) {
    require(cfg.top_k_segments >= 1, ErrorCode::invalid_argument, "top_k_segments must be at least 1");
    const auto hits = search(index, query, SearchParams{cfg.top_k_segments, cfg.nprobe});
    std::vector<RetrievedSegment> out;
    out.reserve(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const Segment* s = catalog.find(hits[i].id);
        require(s != nullptr, ErrorCode::not_found, "stale index: id '" + hits[i].id + "' is not a known segment");
        out.push_back(RetrievedSegment{*s, hits[i].score, i + 1});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 2: proposal generation

/// Merges retrieved segments of the same video whose gap is at most
/// `gap_tolerance_s`. Proposals are ordered by their best constituent rank.
inline std::vector<Proposal> generate_proposals(const std::vector<RetrievedSegment>& ranked, const ProposalConfig& cfg) {
    require(cfg.gap_tolerance_s >= 0.0, ErrorCode::invalid_argument, "gap tolerance must be non-negative");
    std::map<std::string, std::vector<const RetrievedSegment*>> by_video;
    for (const RetrievedSegment& r : ranked) {
        require(r.segment.end_s > r.segment.start_s && r.rank >= 1, ErrorCode::invalid_argument,
                "malformed retrieved segment '" + r.segment.segment_id + "'");
        by_video[r.segment.video_id].push_back(&r);
    }

    std::vector<Proposal> proposals;
    for (auto& [video_id, segs] : by_video) {
        std::sort(segs.begin(), segs.end(), [](const RetrievedSegment* a, const RetrievedSegment* b) {
            return a->segment.start_s != b->segment.start_s ? a->segment.start_s < b->segment.start_s
                                                            : a->segment.index < b->segment.index;
        });
        Proposal current;
        bool open = false;
        for (const RetrievedSegment* r : segs) {
            const Segment& s = r->segment;
            if (open && s.start_s - current.end_s <= cfg.gap_tolerance_s + detail::kTimeEps) {
                current.end_s = std::max(current.end_s, s.end_s);
                current.constituent_segment_ids.push_back(s.segment_id);
                if (r->rank < current.best_segment_rank) {
                    current.best_segment_rank = r->rank;
                    current.best_segment_score = r->score;
                }
                continue;
            }
            if (open) {
                proposals.push_back(std::move(current));
            }
            current = Proposal{video_id, s.start_s, s.end_s, {s.segment_id}, r->rank, r->score};
            open = true;
        }
        if (open) {
            proposals.push_back(std::move(current));
        }
    }
    std::sort(proposals.begin(), proposals.end(), [](const Proposal& a, const Proposal& b) {
        if (a.best_segment_rank != b.best_segment_rank) return a.best_segment_rank < b.best_segment_rank;
        if (a.best_segment_score != b.best_segment_score) return a.best_segment_score > b.best_segment_score;
        if (a.video_id != b.video_id) return a.video_id < b.video_id;
        return a.start_s < b.start_s;
    });
    return proposals;
}

// ---------------------------------------------------------------------------
// Stage 3: padding, refinement, re-ranking

inline Proposal pad_proposal(const Proposal& p, const RefineConfig& cfg, const VideoMeta& video) {
    require(cfg.context_padding_s >= 0.0, ErrorCode::invalid_argument, "context padding must be non-negative");
    Proposal out = p;
    out.start_s = std::max(0.0, p.start_s - cfg.context_padding_s);
    out.end_s = std::min(video.duration_s, p.end_s + cfg.context_padding_s);
    return out;
}

inline std::vector<double> frame_similarities(std::span<const float> query, const MatrixView& frames) {
    std::vector<double> sims(frames.rows);
    for (std::size_t t = 0; t < frames.rows; ++t) {
        sims[t] = cosine_similarity(query, frames.row(t));
    }
    return sims;
}

/// Max per-frame cosine similarity over the slice.
inline double score_moment(std::span<const float> query, const MatrixView& frames) {
    require(frames.rows > 0, ErrorCode::invalid_argument, "cannot score an empty frame slice");
    const auto sims = frame_similarities(query, frames);
    return *std::max_element(sims.begin(), sims.end());
}

/// Thresholds a per-second similarity profile at alpha * max and returns the
/// span from the first to one past the last passing second, clamped to
/// `padded`. `first_frame` is the second of sims[0].
inline Moment refine_from_profile(std::span<const double> sims, std::size_t first_frame, const Moment& padded,
                                  double alpha) {
    require(!sims.empty(), ErrorCode::invalid_argument, "cannot refine over an empty frame slice");
    require(alpha > 0.0 && alpha <= 1.0, ErrorCode::invalid_argument, "profile_alpha must be in (0, 1]");
    const double peak = *std::max_element(sims.begin(), sims.end());
    // Equals alpha * peak for positive peaks; keeps the peak frame admissible
    // when every similarity is negative.
    const double threshold = peak - (1.0 - alpha) * std::abs(peak);
    std::size_t first = sims.size();
    std::size_t last = 0;
    for (std::size_t t = 0; t < sims.size(); ++t) {
        if (sims[t] >= threshold) {
            first = std::min(first, t);
            last = t;
        }
    }
    Moment out{padded.video_id, static_cast<double>(first_frame + first), static_cast<double>(first_frame + last + 1)};
    out.start_s = std::max(out.start_s, padded.start_s);
    out.end_s = std::min(out.end_s, padded.end_s);
    if (out.end_s <= out.start_s) {
        return padded;
    }
    return out;
}

inline Moment refine_similarity_profile(std::span<const float> query, const Moment& padded, const FrameStore& frames,
                                        const RefineConfig& cfg) {
    std::size_t first_frame = 0;
    const MatrixView slice = frames.slice(padded.video_id, padded.start_s, padded.end_s, &first_frame);
    require(slice.rows > 0, ErrorCode::invalid_argument, "cannot refine over an empty frame slice");
    const auto sims = frame_similarities(query, slice);
    return refine_from_profile(sims, first_frame, padded, cfg.profile_alpha);
}

namespace detail {

inline bool ranked_before(const RankedMoment& a, const RankedMoment& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.moment.video_id != b.moment.video_id) return a.moment.video_id < b.moment.video_id;
    if (a.moment.start_s != b.moment.start_s) return a.moment.start_s < b.moment.start_s;
    return a.moment.end_s > b.moment.end_s;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline std::vector<RankedMoment> coarse_moments(const std::vector<Proposal>& proposals) {
    std::vector<RankedMoment> out;
    out.reserve(proposals.size());
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        out.push_back(RankedMoment{proposals[i].moment(), proposals[i].best_segment_score, i + 1, Stage::coarse});
    }
    return out;
}

/// Pads each proposal, scores it by max frame similarity and refines its
/// boundaries; the result is ordered by score (then video id, start).
inline std::vector<RankedMoment> refine_and_rerank(std::span<const float> query, const std::vector<Proposal>& proposals,
                                                   const Corpus& corpus, const FrameStore& frames,
                                                   const RefineConfig& cfg) {
    std::vector<RankedMoment> out;
    out.reserve(proposals.size());
    for (const Proposal& p : proposals) {
        const Proposal padded = pad_proposal(p, cfg, corpus.at(p.video_id));
        const Moment window = padded.moment();
        const MatrixView slice = frames.slice(window.video_id, window.start_s, window.end_s);
        const double phi = score_moment(query, slice);
        const Moment refined = cfg.refiner == RefinerKind::identity
                                   ? window
                                   : refine_similarity_profile(query, window, frames, cfg);
        out.push_back(RankedMoment{refined, phi, 0, Stage::fine});
    }
    std::sort(out.begin(), out.end(), detail::ranked_before);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].rank = i + 1;
    }
    return out;
}

/// Segment retrieval, proposal generation and (optionally) refinement with
/// re-ranking for one query embedding.
inline PipelineResult run_pipeline(std::span<const float> query, const SearchContext& ctx, const PipelineConfig& cfg,
                                   bool with_refinement = true) {
    PipelineResult result;
    auto t0 = std::chrono::steady_clock::now();
    result.segments = retrieve_segments(query, ctx.index, ctx.segments, cfg.retrieval);
    result.timings.segment_retrieval_s = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    result.proposals = generate_proposals(result.segments, cfg.proposal);
    result.coarse = coarse_moments(result.proposals);
    result.timings.proposal_generation_s = detail::seconds_since(t0);

    if (with_refinement) {
        require(ctx.frames != nullptr, ErrorCode::invalid_argument, "fine stage requires a frame store");
        t0 = std::chrono::steady_clock::now();
        result.fine = refine_and_rerank(query, result.proposals, ctx.corpus, *ctx.frames, cfg.refine);
        result.timings.refine_rerank_s = detail::seconds_since(t0);
    }
    return result;
}

/// Text entry point: the query is embedded with the toy embedder at the
/// index dimension.
inline PipelineResult run_pipeline(std::string_view query_text, const SearchContext& ctx, const PipelineConfig& cfg,
                                   bool with_refinement = true) {
    const auto t0 = std::chrono::steady_clock::now();
    const Embedding query = embed_text_toy(query_text, dim_of(ctx.index), cfg.embed_seed);
    const double embed_s = detail::seconds_since(t0);
    PipelineResult result = run_pipeline(std::span<const float>(query), ctx, cfg, with_refinement);
    result.timings.query_embed_s = embed_s;
    return result;
}

}  // namespace spr
