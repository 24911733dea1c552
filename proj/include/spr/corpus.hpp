#pragma once

#include <spr/error.hpp>
#include <spr/jsonl.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spr {

struct VideoMeta {
    std::string video_id;
    double duration_s = 0.0;

    bool operator==(const VideoMeta&) const = default;
};

struct SegmentationConfig {
    double segment_length_s = 4.0;
    bool keep_partial_tail = true;
};

/// A fixed-length slice [start_s, end_s) of one video's timeline.
struct Segment {
    std::string segment_id;
    std::string video_id;
    std::size_t index = 0;
    double start_s = 0.0;
    double end_s = 0.0;

    double length() const { return end_s - start_s; }
    bool operator==(const Segment&) const = default;
};

/// A half-open interval [start_s, end_s) of one video.
struct Moment {
    std::string video_id;
    double start_s = 0.0;
    double end_s = 0.0;

    double length() const { return end_s - start_s; }
    bool operator==(const Moment&) const = default;
};

struct GroundTruthMoment {
    Moment moment;
    int relevance = 0;

    bool operator==(const GroundTruthMoment&) const = default;
};

struct QueryAnnotation {
    std::int64_t query_id = 0;
    std::string query;
    std::vector<GroundTruthMoment> moments;

    bool operator==(const QueryAnnotation&) const = default;
};

inline constexpr int kMinRelevance = 1;
inline constexpr int kMaxRelevance = 4;

inline std::string make_segment_id(std::string_view video_id, std::size_t index) {
    std::string id(video_id);
    id += '#';
    id += std::to_string(index);
    return id;
}

// ---------------------------------------------------------------------------
// Corpus

/// Video metadata registry. Mutable until sealed, read-only afterwards.
class Corpus {
public:
    const VideoMeta& register_video(std::string video_id, double duration_s) {
        require(!sealed_, ErrorCode::invalid_argument, "corpus is sealed");
        require(std::isfinite(duration_s) && duration_s > 0.0, ErrorCode::invalid_argument,
                "non-positive duration for video '" + video_id + "'");
        require(!video_id.empty(), ErrorCode::invalid_argument, "empty video id");
        require(!by_id_.contains(video_id), ErrorCode::duplicate,
                "duplicate video id '" + video_id + "'");
        by_id_.emplace(video_id, videos_.size());
        videos_.push_back(VideoMeta{std::move(video_id), duration_s});
        return videos_.back();
    }

    const VideoMeta* find(std::string_view video_id) const {
        auto it = by_id_.find(std::string(video_id));
        return it == by_id_.end() ? nullptr : &videos_[it->second];
    }

    const VideoMeta& at(std::string_view video_id) const {
        const VideoMeta* video = find(video_id);
        require(video != nullptr, ErrorCode::not_found,
                "unknown video id '" + std::string(video_id) + "'");
        return *video;
    }

    bool contains(std::string_view video_id) const { return find(video_id) != nullptr; }
    const std::vector<VideoMeta>& videos() const { return videos_; }
    std::size_t size() const { return videos_.size(); }

    void seal() { sealed_ = true; }
    bool sealed() const { return sealed_; }

private:
    std::vector<VideoMeta> videos_;
    std::unordered_map<std::string, std::size_t> by_id_;
    bool sealed_ = false;
};

// ---------------------------------------------------------------------------
// Segmentation

namespace detail {
// Slack for floating-point division when a duration is a multiple of the
// segment length (e.g. 0.3 / 0.1).
inline constexpr double kTimeEps = 1e-9;
}  // namespace detail

inline std::size_t segment_count(double duration_s, const SegmentationConfig& cfg) {
    require(cfg.segment_length_s > 0.0 && std::isfinite(cfg.segment_length_s),
            ErrorCode::invalid_argument, "segment length must be positive");
    const double ratio = duration_s / cfg.segment_length_s;
    auto full = static_cast<std::size_t>(std::floor(ratio + detail::kTimeEps));
    if (cfg.keep_partial_tail &&
        duration_s - static_cast<double>(full) * cfg.segment_length_s > detail::kTimeEps) {
        ++full;
    }
    return full;
}

inline std::vector<Segment> segment_video(const VideoMeta& video, const SegmentationConfig& cfg) {
    const std::size_t count = segment_count(video.duration_s, cfg);
    std::vector<Segment> segments;
    segments.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double start = static_cast<double>(i) * cfg.segment_length_s;
        const double end = std::min(static_cast<double>(i + 1) * cfg.segment_length_s, video.duration_s);
        segments.push_back(Segment{make_segment_id(video.video_id, i), video.video_id, i, start, end});
    }
    return segments;
}

/// |segment ∩ moment| / |segment|.
inline double segment_overlap_fraction(const Segment& segment, const Moment& moment) {
    require(segment.video_id == moment.video_id, ErrorCode::invalid_argument,
            "segment '" + segment.segment_id + "' and moment belong to different videos");
    const double inter = std::min(segment.end_s, moment.end_s) - std::max(segment.start_s, moment.start_s);
    if (inter <= 0.0 || segment.length() <= 0.0) {
        return 0.0;
    }
    return std::min(1.0, inter / segment.length());
}

/// All segments of a corpus, addressable by segment id.
class SegmentCatalog {
public:
    SegmentCatalog() = default;

    void add(Segment segment) {
        require(!by_id_.contains(segment.segment_id), ErrorCode::duplicate,
                "duplicate segment id '" + segment.segment_id + "'");
        by_id_.emplace(segment.segment_id, segments_.size());
        segments_.push_back(std::move(segment));
    }

    const Segment* find(std::string_view segment_id) const {
        auto it = by_id_.find(std::string(segment_id));
        return it == by_id_.end() ? nullptr : &segments_[it->second];
    }

    const std::vector<Segment>& segments() const { return segments_; }
    std::size_t size() const { return segments_.size(); }

private:
    std::vector<Segment> segments_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

inline SegmentCatalog segment_corpus(const Corpus& corpus, const SegmentationConfig& cfg) {
    SegmentCatalog catalog;
    for (const VideoMeta& video : corpus.videos()) {
        for (Segment& segment : segment_video(video, cfg)) {
            catalog.add(std::move(segment));
        }
    }
    return catalog;
}

// ---------------------------------------------------------------------------
// Manifests

inline Corpus load_video_manifest(std::istream& in, const std::string& source = "videos") {
    Corpus corpus;
    read_jsonl(in, source, [&](std::size_t, const json& record) {
        corpus.register_video(get_field<std::string>(record, "video_id"),
                              get_field<double>(record, "duration_s"));
    });
    return corpus;
}

inline void write_video_manifest(std::ostream& out, const Corpus& corpus) {
    for (const VideoMeta& video : corpus.videos()) {
        write_jsonl_record(out, json{{"video_id", video.video_id}, {"duration_s", video.duration_s}});
    }
}

inline void write_segment_manifest(std::ostream& out, const SegmentCatalog& catalog) {
    for (const Segment& s : catalog.segments()) {
        write_jsonl_record(out, json{{"segment_id", s.segment_id},
                                     {"video_id", s.video_id},
                                     {"index", s.index},
                                     {"start_s", s.start_s},
                                     {"end_s", s.end_s}});
    }
}

inline SegmentCatalog load_segment_manifest(std::istream& in, const Corpus& corpus,
                                            const std::string& source = "segments") {
    SegmentCatalog catalog;
    read_jsonl(in, source, [&](std::size_t, const json& record) {
        Segment s{get_field<std::string>(record, "segment_id"), get_field<std::string>(record, "video_id"),
                  get_field<std::size_t>(record, "index"), get_field<double>(record, "start_s"),
                  get_field<double>(record, "end_s")};
        const VideoMeta& video = corpus.at(s.video_id);
        require(s.start_s >= 0.0 && s.end_s > s.start_s && s.end_s <= video.duration_s + detail::kTimeEps,
                ErrorCode::validation, "segment '" + s.segment_id + "' lies outside its video");
        catalog.add(std::move(s));
    });
    return catalog;
}

// ---------------------------------------------------------------------------
// Annotations

/// Query id -> graded ground truth. Ordered by query id so iteration is
/// deterministic.
class AnnotationSet {
public:
    void add(QueryAnnotation entry) {
        const auto id = entry.query_id;
        auto [it, inserted] = entries_.emplace(id, std::move(entry));
        require(inserted, ErrorCode::duplicate, "duplicate query id " + std::to_string(id));
    }

    const QueryAnnotation* find(std::int64_t query_id) const {
        auto it = entries_.find(query_id);
        return it == entries_.end() ? nullptr : &it->second;
    }

    const std::map<std::int64_t, QueryAnnotation>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    bool operator==(const AnnotationSet&) const = default;

private:
    std::map<std::int64_t, QueryAnnotation> entries_;
};

namespace detail {

// Line of the n-th (0-based) occurrence of the JSON key `"key"` in `text`.
// Used to attach line numbers to semantic errors found after parsing.
inline std::optional<std::size_t> line_of_key(const std::string& text, std::string_view key, std::size_t n) {
    const std::string needle = "\"" + std::string(key) + "\"";
    std::size_t pos = 0;
    std::size_t seen = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        if (pos == 0 || text[pos - 1] != '\\') {
            if (seen == n) {
                return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + pos, '\n'));
            }
            ++seen;
        }
        pos += needle.size();
    }
    return std::nullopt;
}

inline std::string at_line(const std::string& source, std::optional<std::size_t> line) {
    return line ? source + ":" + std::to_string(*line) + ": " : source + ": ";
}

}  // namespace detail

inline void validate_moment(const Moment& m, const Corpus& corpus) {
    const VideoMeta& video = corpus.at(m.video_id);
    require(m.start_s >= 0.0 && m.end_s > m.start_s && m.end_s <= video.duration_s + 1e-6,
            ErrorCode::validation, "moment [" + std::to_string(m.start_s) + ", " + std::to_string(m.end_s) +
                                       ") is outside video '" + m.video_id + "'");
}

/// Parses the annotation document. When `corpus` is given, every moment
/// must reference a registered video and lie within its duration.
inline AnnotationSet load_annotations(std::istream& in, const Corpus* corpus = nullptr,
                                      const std::string& source = "annotations") {
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    AnnotationSet set;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        return set;
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto line = 1 + std::count(text.begin(), text.begin() + std::min(e.byte, text.size()), '\n');
        fail(ErrorCode::parse, source + ":" + std::to_string(line) + ": " + e.what());
    }
    require(doc.is_object() && doc.contains("queries") && doc["queries"].is_array(), ErrorCode::validation,
            source + ": expected an object with a 'queries' array");

    std::size_t moment_ordinal = 0;
    std::size_t query_ordinal = 0;
    for (const json& q : doc["queries"]) {
        const auto q_line = detail::line_of_key(text, "query_id", query_ordinal);
        QueryAnnotation entry;
        try {
            require(q.is_object(), ErrorCode::validation, "query record is not an object");
            entry.query_id = get_field<std::int64_t>(q, "query_id");
            entry.query = get_field<std::string>(q, "query");
            require(q.contains("relevant_moments") && q["relevant_moments"].is_array(), ErrorCode::validation,
                    "missing 'relevant_moments' array");
        } catch (const Error& e) {
            fail(e.code(), detail::at_line(source, q_line) + e.what());
        }
        for (const json& m : q["relevant_moments"]) {
            const auto m_line = detail::line_of_key(text, "video_id", moment_ordinal++);
            try {
                require(m.is_object(), ErrorCode::validation, "moment record is not an object");
                GroundTruthMoment gt{Moment{get_field<std::string>(m, "video_id"), get_field<double>(m, "start_s"),
                                            get_field<double>(m, "end_s")},
                                     get_field<int>(m, "relevance")};
                require(gt.relevance >= kMinRelevance && gt.relevance <= kMaxRelevance, ErrorCode::validation,
                        "relevance " + std::to_string(gt.relevance) + " out of range [1,4]");
                require(gt.moment.start_s >= 0.0 && gt.moment.end_s > gt.moment.start_s, ErrorCode::validation,
                        "moment interval is empty or negative");
                if (corpus != nullptr) {
                    validate_moment(gt.moment, *corpus);
                }
                entry.moments.push_back(std::move(gt));
            } catch (const Error& e) {
                fail(e.code(), detail::at_line(source, m_line) + "query " + std::to_string(entry.query_id) + ": " +
                                   e.what());
            }
        }
        try {
            set.add(std::move(entry));
        } catch (const Error& e) {
            fail(e.code(), detail::at_line(source, q_line) + e.what());
        }
        ++query_ordinal;
    }
    return set;
}

inline json annotations_to_json(const AnnotationSet& set) {
    json queries = json::array();
    for (const auto& [id, entry] : set.entries()) {
        json moments = json::array();
        for (const GroundTruthMoment& gt : entry.moments) {
            moments.push_back(json{{"video_id", gt.moment.video_id},
                                   {"start_s", gt.moment.start_s},
                                   {"end_s", gt.moment.end_s},
                                   {"relevance", gt.relevance}});
        }
        queries.push_back(json{{"query_id", id}, {"query", entry.query}, {"relevant_moments", std::move(moments)}});
    }
    return json{{"queries", std::move(queries)}};
}

inline void write_annotations(std::ostream& out, const AnnotationSet& set) {
    out << annotations_to_json(set).dump(1) << '\n';
}

}  // namespace spr
