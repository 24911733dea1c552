#pragma once

#include <spr/corpus.hpp>
#include <spr/error.hpp>
#include <spr/jsonl.hpp>
#include <spr/pipeline.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace spr {

inline constexpr double kIouEps = 1e-12;

inline double iou(const Moment& a, const Moment& b) {
    if (a.video_id != b.video_id) {
        return 0.0;
    }
    const double inter = std::max(0.0, std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s));
    const double uni = a.length() + b.length() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct MatchResult {
    std::vector<int> relevance;                     // per prediction, 0 if unmatched
    std::vector<std::optional<std::size_t>> gt;     // index into the GT list
};

/// Greedy one-to-one matching in rank order. Each prediction takes the
/// unmatched GT with IoU >= mu of highest relevance, then IoU, then earliest
/// start.
inline MatchResult match_predictions(const std::vector<Moment>& preds, const std::vector<GroundTruthMoment>& gts,
                                     double mu) {
    MatchResult out;
    out.relevance.assign(preds.size(), 0);
    out.gt.assign(preds.size(), std::nullopt);
    std::vector<bool> used(gts.size(), false);
    for (std::size_t p = 0; p < preds.size(); ++p) {
        std::optional<std::size_t> best;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double v = iou(preds[p], gts[g].moment);
            if (v < mu - kIouEps) continue;
            if (!best) {
                best = g;
                best_iou = v;
                continue;
            }
            const GroundTruthMoment& cur = gts[*best];
            const bool better = gts[g].relevance != cur.relevance ? gts[g].relevance > cur.relevance
                                : v != best_iou                   ? v > best_iou
                                                                  : gts[g].moment.start_s < cur.moment.start_s;
            if (better) {
                best = g;
                best_iou = v;
            }
        }
        if (best) {
            used[*best] = true;
            out.relevance[p] = gts[*best].relevance;
            out.gt[p] = best;
        }
    }
    return out;
}

inline double dcg_at_k(const std::vector<int>& relevances, int k) {
    require(k >= 1, ErrorCode::invalid_argument, "K must be at least 1");
    double dcg = 0.0;
    const std::size_t n = std::min(relevances.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        require(relevances[i] >= 0, ErrorCode::invalid_argument, "negative relevance");
        dcg += (std::exp2(relevances[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg;
}

inline double ideal_dcg(const std::vector<GroundTruthMoment>& gts, int k) {
    std::vector<int> rels;
    rels.reserve(gts.size());
    for (const auto& g : gts) rels.push_back(g.relevance);
    std::sort(rels.rbegin(), rels.rend());
    return dcg_at_k(rels, k);
}

inline double ndcg_at_k(const std::vector<Moment>& preds, const std::vector<GroundTruthMoment>& gts, int k, double mu) {
    const double idcg = ideal_dcg(gts, k);
    if (idcg <= 0.0) {
        return 0.0;
    }
    return dcg_at_k(match_predictions(preds, gts, mu).relevance, k) / idcg;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalConfig {
    std::vector<int> cutoffs{10, 20, 40};
    std::vector<double> iou_thresholds{0.3, 0.5, 0.7};

    void validate() const {
        require(!cutoffs.empty() && !iou_thresholds.empty(), ErrorCode::invalid_argument, "empty evaluation grid");
        for (int k : cutoffs) require(k >= 1, ErrorCode::invalid_argument, "K must be at least 1");
        for (double mu : iou_thresholds) {
            require(mu > 0.0 && mu <= 1.0, ErrorCode::invalid_argument, "IoU threshold must be in (0, 1]");
        }
    }
};

struct EvalCell {
    int k = 0;
    double iou = 0.0;
    double ndcg = 0.0;
};

struct QueryScores {
    std::int64_t query_id = 0;
    std::vector<EvalCell> cells;
};

struct EvalReport {
    std::size_t num_queries = 0;
    std::vector<EvalCell> cells;  // K-major, then mu
    std::vector<QueryScores> per_query;

    double cell(int k, double mu) const {
        for (const auto& c : cells) {
            if (c.k == k && std::abs(c.iou - mu) < 1e-12) return c.ndcg;
        }
        fail(ErrorCode::not_found, "no cell for K=" + std::to_string(k) + ", IoU=" + std::to_string(mu));
    }
};

inline json cells_to_json(const std::vector<EvalCell>& cells) {
    json out = json::array();
    for (const auto& c : cells) out.push_back({{"K", c.k}, {"iou", c.iou}, {"ndcg", c.ndcg}});
    return out;
}

inline json report_to_json(const EvalReport& r, bool include_per_query = true) {
    json doc{{"num_queries", r.num_queries}, {"cells", cells_to_json(r.cells)}};
    json per = json::array();
    if (include_per_query) {
        for (const auto& q : r.per_query) per.push_back({{"query_id", q.query_id}, {"cells", cells_to_json(q.cells)}});
    }
    doc["per_query"] = std::move(per);
    return doc;
}

/// Averages per-query cell functions over every annotated query.
template <class PerQuery>
EvalReport aggregate_report(const AnnotationSet& annotations, const EvalConfig& cfg, PerQuery&& score) {
    cfg.validate();
    EvalReport report;
    report.num_queries = annotations.size();
    for (int k : cfg.cutoffs) {
        for (double mu : cfg.iou_thresholds) report.cells.push_back(EvalCell{k, mu, 0.0});
    }
    for (const auto& [qid, ann] : annotations.entries()) {
        QueryScores qs{qid, report.cells};
        for (std::size_t c = 0; c < qs.cells.size(); ++c) {
            qs.cells[c].ndcg = score(ann, qs.cells[c].k, qs.cells[c].iou);
            report.cells[c].ndcg += qs.cells[c].ndcg;
        }
        report.per_query.push_back(std::move(qs));
    }
    if (report.num_queries > 0) {
        for (auto& c : report.cells) c.ndcg /= static_cast<double>(report.num_queries);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Run files

struct RunRecord {
    std::int64_t query_id = 0;
    Stage stage = Stage::fine;
    std::vector<RankedMoment> results;
};

inline json run_record_to_json(const RunRecord& r) {
    json results = json::array();
    for (const auto& m : r.results) {
        results.push_back({{"video_id", m.moment.video_id},
                           {"start_s", m.moment.start_s},
                           {"end_s", m.moment.end_s},
                           {"score", m.score},
                           {"rank", m.rank}});
    }
    return json{{"query_id", r.query_id}, {"stage", std::string(to_string(r.stage))}, {"results", std::move(results)}};
}

inline void write_run(std::ostream& out, const std::vector<RunRecord>& run) {
    for (const auto& r : run) write_jsonl_record(out, run_record_to_json(r));
}

inline std::vector<RunRecord> read_run(std::istream& in, const std::string& source = "run") {
    std::vector<RunRecord> run;
    read_jsonl(in, source, [&](std::size_t, const json& rec) {
        RunRecord r;
        r.query_id = get_field<std::int64_t>(rec, "query_id");
        r.stage = parse_stage(get_field<std::string>(rec, "stage"));
        const auto& results = rec.at("results");
        require(results.is_array(), ErrorCode::validation, "'results' must be an array");
        for (const auto& item : results) {
            RankedMoment m;
            m.moment.video_id = get_field<std::string>(item, "video_id");
            m.moment.start_s = get_field<double>(item, "start_s");
            m.moment.end_s = get_field<double>(item, "end_s");
            m.score = get_field<double>(item, "score");
            const auto rank = get_field<std::int64_t>(item, "rank");
            require(rank >= 1, ErrorCode::validation, "rank must be positive");
            require(m.moment.end_s > m.moment.start_s && m.moment.start_s >= 0.0, ErrorCode::validation,
                    "malformed interval");
            m.rank = static_cast<std::size_t>(rank);
            m.stage = r.stage;
            r.results.push_back(std::move(m));
        }
        run.push_back(std::move(r));
    });
    return run;
}

/// Mean NDCG per (K, mu) over all annotated queries. With `stage` set,
/// records of the other stage are ignored; otherwise each query may appear
/// at most once.
inline EvalReport evaluate_run(const std::vector<RunRecord>& run, const AnnotationSet& annotations,
                               const EvalConfig& cfg, std::optional<Stage> stage = std::nullopt) {
    std::map<std::int64_t, std::vector<Moment>> preds;
    for (const auto& r : run) {
        if (stage && r.stage != *stage) continue;
        require(annotations.find(r.query_id) != nullptr, ErrorCode::validation,
                "run references unknown query_id " + std::to_string(r.query_id));
        require(!preds.contains(r.query_id), ErrorCode::validation,
                "query_id " + std::to_string(r.query_id) + " appears more than once in the run");
        std::vector<RankedMoment> sorted = r.results;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const RankedMoment& a, const RankedMoment& b) { return a.rank < b.rank; });
        auto& list = preds[r.query_id];
        for (const auto& m : sorted) list.push_back(m.moment);
    }
    static const std::vector<Moment> none;
    return aggregate_report(annotations, cfg, [&](const QueryAnnotation& ann, int k, double mu) {
        const auto it = preds.find(ann.query_id);
        return ndcg_at_k(it == preds.end() ? none : it->second, ann.moments, k, mu);
    });
}

// ---------------------------------------------------------------------------
// Upper bounds over fixed proposals

inline std::vector<Moment> pad_moments(const std::vector<Moment>& proposals, const Corpus& corpus, double padding_s) {
    require(padding_s >= 0.0, ErrorCode::invalid_argument, "context padding must be non-negative");
    std::vector<Moment> out;
    out.reserve(proposals.size());
    for (const auto& p : proposals) {
        const double duration = corpus.at(p.video_id).duration_s;
        out.push_back(Moment{p.video_id, std::max(0.0, p.start_s - padding_s), std::min(duration, p.end_s + padding_s)});
    }
    return out;
}

namespace detail {

inline bool overlaps(const Moment& a, const Moment& b) {
    return a.video_id == b.video_id && std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s) > 0.0;
}

}  // namespace detail

/// Ideal refinement and re-ranking: every GT touching a padded proposal is
/// recovered exactly, ranked by relevance. Independent of mu.
inline double upper_bound_ndcg(const std::vector<Moment>& padded, const std::vector<GroundTruthMoment>& gts, int k) {
    const double idcg = ideal_dcg(gts, k);
    if (idcg <= 0.0) return 0.0;
    std::vector<int> rels;
    for (const auto& g : gts) {
        const bool hit = std::any_of(padded.begin(), padded.end(),
                                     [&](const Moment& p) { return detail::overlaps(p, g.moment); });
        if (hit) rels.push_back(g.relevance);
    }
    std::sort(rels.rbegin(), rels.rend());
    return dcg_at_k(rels, k) / idcg;
}

struct GridCandidate {
    Moment moment;
    double iou = 0.0;
};

/// The interval within `padded` whose boundaries lie on multiples of `scale`
/// (or on the padded bounds themselves) that maximizes IoU with `gt`.
inline GridCandidate best_grid_interval(const Moment& padded, const Moment& gt, double scale) {
    require(scale > 0.0, ErrorCode::invalid_argument, "min_time_scale must be positive");
    std::vector<double> points{padded.start_s, padded.end_s};
    const auto first = static_cast<std::int64_t>(std::ceil(padded.start_s / scale - 1e-9));
    for (std::int64_t i = first;; ++i) {
        const double t = static_cast<double>(i) * scale;
        if (t > padded.end_s + 1e-9) break;
        if (t > padded.start_s + 1e-9 && t < padded.end_s - 1e-9) points.push_back(t);
    }
    std::sort(points.begin(), points.end());
    GridCandidate best{Moment{padded.video_id, padded.start_s, padded.end_s}, iou(padded, gt)};
    for (std::size_t a = 0; a < points.size(); ++a) {
        for (std::size_t b = a + 1; b < points.size(); ++b) {
            const Moment m{padded.video_id, points[a], points[b]};
            const double v = iou(m, gt);
            if (v > best.iou) best = GridCandidate{m, v};
        }
    }
    return best;
}

/// As the upper bound, but candidates are grid intervals inside the padded
/// proposals and only count when their IoU reaches mu.
inline double practical_upper_bound_ndcg(const std::vector<Moment>& padded, const std::vector<GroundTruthMoment>& gts,
                                         int k, double mu, double scale) {
    const double idcg = ideal_dcg(gts, k);
    if (idcg <= 0.0) return 0.0;
    std::vector<std::pair<int, double>> cands;
    for (const auto& g : gts) {
        double best = 0.0;
        for (const auto& p : padded) {
            if (!detail::overlaps(p, g.moment)) continue;
            best = std::max(best, best_grid_interval(p, g.moment, scale).iou);
        }
        if (best > 0.0 && best >= mu - kIouEps) cands.emplace_back(g.relevance, best);
    }
    std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second > b.second;
    });
    std::vector<int> rels;
    for (const auto& c : cands) rels.push_back(c.first);
    return dcg_at_k(rels, k) / idcg;
}

struct BoundConfig {
    double context_padding_s = 8.0;
    std::optional<double> min_time_scale_s;  // absent: UB
};

/// UB or PUB report from unpadded coarse proposals keyed by query id.
inline EvalReport bound_report(const std::map<std::int64_t, std::vector<Moment>>& proposals,
                               const AnnotationSet& annotations, const Corpus& corpus, const EvalConfig& cfg,
                               const BoundConfig& bound) {
    if (bound.min_time_scale_s) {
        require(*bound.min_time_scale_s > 0.0, ErrorCode::invalid_argument, "min_time_scale must be positive");
    }
    std::map<std::int64_t, std::vector<Moment>> padded;
    for (const auto& [qid, list] : proposals) padded[qid] = pad_moments(list, corpus, bound.context_padding_s);
    static const std::vector<Moment> none;
    return aggregate_report(annotations, cfg, [&](const QueryAnnotation& ann, int k, double mu) {
        const auto it = padded.find(ann.query_id);
        const auto& list = it == padded.end() ? none : it->second;
        return bound.min_time_scale_s ? practical_upper_bound_ndcg(list, ann.moments, k, mu, *bound.min_time_scale_s)
                                      : upper_bound_ndcg(list, ann.moments, k);
    });
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Fraction of all GTs with at least one retrieved segment covering at least
/// `threshold` of the segment.
inline double segment_recall(const std::map<std::int64_t, std::vector<Segment>>& retrieved,
                             const AnnotationSet& annotations, double threshold) {
    require(threshold > 0.0 && threshold <= 1.0, ErrorCode::invalid_argument, "overlap threshold must be in (0, 1]");
    std::size_t total = 0;
    std::size_t hit = 0;
    for (const auto& [qid, ann] : annotations.entries()) {
        const auto it = retrieved.find(qid);
        for (const auto& g : ann.moments) {
            ++total;
            if (it == retrieved.end()) continue;
            const bool found = std::any_of(it->second.begin(), it->second.end(), [&](const Segment& s) {
                return s.video_id == g.moment.video_id && segment_overlap_fraction(s, g.moment) >= threshold - kIouEps;
            });
            if (found) ++hit;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace spr
