#pragma once

#include <spr/corpus.hpp>
#include <spr/embedding.hpp>
#include <spr/error.hpp>
#include <spr/evaluation.hpp>
#include <spr/index.hpp>
#include <spr/jsonl.hpp>
#include <spr/pipeline.hpp>
#include <spr/synthetic.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace spr {

inline constexpr std::string_view kEngineVersion = "spr-0.1.0";

struct EnginePaths {
    std::string videos;
    std::string segments;  // optional; derived from videos when empty
    std::string segment_embeddings;
    std::string segment_ids;
    std::string frames;
    std::string frame_ids;
    std::string annotations;
    std::string queries;
    std::string query_ids;
    std::string index;
};

struct ServiceConfig {
    std::string addr = "127.0.0.1:8080";
    double deadline_s = 10.0;
    std::size_t threads = 8;
};

struct EngineConfig {
    EnginePaths paths;
    SegmentationConfig segmentation;
    PipelineConfig pipeline;
    IndexBuildParams index;
    ServiceConfig service;
    std::size_t parallelism = 1;
};

inline json config_to_json(const EngineConfig& c) {
    const auto& p = c.paths;
    const auto& pl = c.pipeline;
    return json{
        {"paths",
         {{"videos", p.videos},
          {"segments", p.segments},
          {"segment_embeddings", p.segment_embeddings},
          {"segment_ids", p.segment_ids},
          {"frames", p.frames},
          {"frame_ids", p.frame_ids},
          {"annotations", p.annotations},
          {"queries", p.queries},
          {"query_ids", p.query_ids},
          {"index", p.index}}},
        {"segmentation",
         {{"segment_length_s", c.segmentation.segment_length_s},
          {"keep_partial_tail", c.segmentation.keep_partial_tail}}},
        {"retrieval", {{"top_k_segments", pl.retrieval.top_k_segments}, {"nprobe", pl.retrieval.nprobe}}},
        {"proposal", {{"gap_tolerance_s", pl.proposal.gap_tolerance_s}}},
        {"refine",
         {{"context_padding_s", pl.refine.context_padding_s},
          {"profile_alpha", pl.refine.profile_alpha},
          {"refiner", std::string(to_string(pl.refine.refiner))}}},
        {"index",
         {{"kind", std::string(to_string(c.index.kind))},
          {"nlist", c.index.nlist},
          {"m", c.index.m},
          {"nbits", c.index.nbits},
          {"kmeans_iters", c.index.kmeans.max_iters},
          {"seed", c.index.kmeans.seed}}},
        {"service",
         {{"addr", c.service.addr}, {"deadline_s", c.service.deadline_s}, {"threads", c.service.threads}}},
        {"embed_seed", pl.embed_seed},
        {"parallelism", c.parallelism},
    };
}

namespace detail {

inline void check_known_keys(const json& doc, const json& defaults, const std::string& prefix) {
    require(doc.is_object(), ErrorCode::validation,
            "config" + (prefix.empty() ? std::string() : " field '" + prefix + "'") + " must be an object");
    for (const auto& [key, value] : doc.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        require(defaults.contains(key), ErrorCode::validation, "unknown config key '" + path + "'");
        if (defaults.at(key).is_object()) {
            check_known_keys(value, defaults.at(key), path);
        }
    }
}

inline void flatten_keys(const json& doc, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& [key, value] : doc.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            flatten_keys(value, path, out);
        } else {
            out.push_back(path);
        }
    }
}

inline json::json_pointer dotted_pointer(const std::string& dotted) {
    std::string ptr;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) ptr += "/" + part;
    return json::json_pointer(ptr);
}

template <typename T>
T config_value(const json& doc, const std::string& dotted) {
    const json& v = doc.at(dotted_pointer(dotted));
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        fail(ErrorCode::validation, "config field '" + dotted + "' has the wrong type");
    }
}

}  // namespace detail

/// Dotted names of every scalar config field.
inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    detail::flatten_keys(config_to_json(EngineConfig{}), "", keys);
    return keys;
}

/// Sets one dotted field from its textual form, typed after the default.
inline void apply_override(json& doc, const std::string& dotted, const std::string& text) {
    const json defaults = config_to_json(EngineConfig{});
    const auto ptr = detail::dotted_pointer(dotted);
    require(defaults.contains(ptr) && !defaults.at(ptr).is_object(), ErrorCode::invalid_argument,
            "unknown config key '" + dotted + "'");
    const json& like = defaults.at(ptr);
    json value;
    if (like.is_string()) {
        value = text;
    } else {
        value = json::parse(text, nullptr, false);
        const bool ok = !value.is_discarded() &&
                        (like.is_boolean() ? value.is_boolean()
                         : like.is_number_unsigned() ? value.is_number_unsigned()
                                                     : value.is_number());
        require(ok, ErrorCode::invalid_argument, "bad value '" + text + "' for '" + dotted + "'");
    }
    doc[ptr] = std::move(value);
}

/// Parses a (possibly partial) config document; relative paths resolve
/// against `base_dir`.
inline EngineConfig config_from_json(const json& doc, const std::filesystem::path& base_dir = {}) {
    json merged = config_to_json(EngineConfig{});
    detail::check_known_keys(doc, merged, "");
    merged.merge_patch(doc);
    using detail::config_value;

    EngineConfig c;
    auto path = [&](const std::string& key) {
        const auto p = config_value<std::string>(merged, "paths." + key);
        if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (base_dir / p).string();
    };
    c.paths = EnginePaths{path("videos"),     path("segments"),    path("segment_embeddings"), path("segment_ids"),
                          path("frames"),     path("frame_ids"),   path("annotations"),        path("queries"),
                          path("query_ids"),  path("index")};
    c.segmentation.segment_length_s = config_value<double>(merged, "segmentation.segment_length_s");
    c.segmentation.keep_partial_tail = config_value<bool>(merged, "segmentation.keep_partial_tail");
    auto& pl = c.pipeline;
    pl.retrieval.top_k_segments = config_value<std::size_t>(merged, "retrieval.top_k_segments");
    pl.retrieval.nprobe = config_value<std::size_t>(merged, "retrieval.nprobe");
    pl.proposal.gap_tolerance_s = config_value<double>(merged, "proposal.gap_tolerance_s");
    pl.refine.context_padding_s = config_value<double>(merged, "refine.context_padding_s");
    pl.refine.profile_alpha = config_value<double>(merged, "refine.profile_alpha");
    pl.refine.refiner = parse_refiner_kind(config_value<std::string>(merged, "refine.refiner"));
    pl.embed_seed = config_value<std::uint64_t>(merged, "embed_seed");
    c.index.kind = parse_index_kind(config_value<std::string>(merged, "index.kind"));
    c.index.nlist = config_value<std::size_t>(merged, "index.nlist");
    c.index.m = config_value<std::size_t>(merged, "index.m");
    c.index.nbits = config_value<std::size_t>(merged, "index.nbits");
    c.index.kmeans.max_iters = config_value<std::size_t>(merged, "index.kmeans_iters");
    c.index.kmeans.seed = config_value<std::uint64_t>(merged, "index.seed");
    c.service.addr = config_value<std::string>(merged, "service.addr");
    c.service.deadline_s = config_value<double>(merged, "service.deadline_s");
    c.service.threads = config_value<std::size_t>(merged, "service.threads");
    c.parallelism = config_value<std::size_t>(merged, "parallelism");

    require(c.segmentation.segment_length_s > 0.0, ErrorCode::validation, "segment_length_s must be positive");
    require(pl.retrieval.top_k_segments >= 1, ErrorCode::validation, "top_k_segments must be at least 1");
    require(pl.proposal.gap_tolerance_s >= 0.0, ErrorCode::validation, "gap_tolerance_s must be non-negative");
    require(pl.refine.context_padding_s >= 0.0, ErrorCode::validation, "context_padding_s must be non-negative");
    require(pl.refine.profile_alpha > 0.0 && pl.refine.profile_alpha <= 1.0, ErrorCode::validation,
            "profile_alpha must be in (0, 1]");
    require(c.service.deadline_s > 0.0 && c.service.threads >= 1 && c.parallelism >= 1, ErrorCode::validation,
            "service deadline, threads and parallelism must be positive");
    return c;
}

/// Reads the config file named by `path` (or SPR_CONFIG when empty), then
/// applies dotted overrides in order.
inline json read_config_document(std::string path) {
    if (path.empty()) {
        if (const char* env = std::getenv("SPR_CONFIG"); env != nullptr) path = env;
    }
    if (path.empty()) return json::object();
    auto in = open_input(path);
    json doc = json::parse(in, nullptr, false);
    require(!doc.is_discarded(), ErrorCode::parse, path + ": malformed config document");
    return doc;
}

inline std::filesystem::path config_base_dir(std::string path) {
    if (path.empty()) {
        if (const char* env = std::getenv("SPR_CONFIG"); env != nullptr) path = env;
    }
    return path.empty() ? std::filesystem::path() : std::filesystem::absolute(path).parent_path();
}

// ---------------------------------------------------------------------------
// Engine

struct Engine {
    EngineConfig config;
    Corpus corpus;
    SegmentCatalog segments;
    VectorIndex index;
    std::optional<FrameStore> frames;
    std::optional<AnnotationSet> annotations;
    std::optional<EmbeddingTable> queries;
    std::uint32_t index_crc = 0;

    SearchContext context() const { return SearchContext{corpus, segments, index, frames ? &*frames : nullptr}; }
};

inline Corpus load_corpus_from(const EngineConfig& cfg) {
    require(!cfg.paths.videos.empty(), ErrorCode::validation, "config: paths.videos is required");
    auto in = open_input(cfg.paths.videos);
    Corpus corpus = load_video_manifest(in, cfg.paths.videos);
    corpus.seal();
    return corpus;
}

inline SegmentCatalog load_catalog_from(const EngineConfig& cfg, const Corpus& corpus) {
    if (cfg.paths.segments.empty()) return segment_corpus(corpus, cfg.segmentation);
    auto in = open_input(cfg.paths.segments);
    return load_segment_manifest(in, corpus, cfg.paths.segments);
}

inline void check_index_against(const VectorIndex& index, const SegmentCatalog& catalog) {
    for (const auto& id : ids_of(index)) {
        require(catalog.find(id) != nullptr, ErrorCode::validation,
                "stale index: id '" + id + "' is not a known segment");
    }
}

/// Builds an index from the configured segment embeddings.
inline VectorIndex build_index_from(const EngineConfig& cfg, std::ostream* log = &std::clog) {
    require(!cfg.paths.segment_embeddings.empty() && !cfg.paths.segment_ids.empty(), ErrorCode::validation,
            "config: paths.segment_embeddings and paths.segment_ids are required");
    const Corpus corpus = load_corpus_from(cfg);
    const SegmentCatalog catalog = load_catalog_from(cfg, corpus);
    auto m = open_input(cfg.paths.segment_embeddings, true);
    auto i = open_input(cfg.paths.segment_ids);
    const EmbeddingTable table = load_embeddings(m, i, log, cfg.paths.segment_embeddings);
    for (const auto& id : table.ids()) {
        require(catalog.find(id) != nullptr, ErrorCode::validation,
                cfg.paths.segment_ids + ": id '" + id + "' is not a known segment");
    }
    return build_index(table, cfg.index);
}

/// Loads every configured artifact; any missing or inconsistent file is an
/// error.
inline Engine load_engine(const EngineConfig& cfg, std::ostream* log = &std::clog) {
    Engine e;
    e.config = cfg;
    e.corpus = load_corpus_from(cfg);
    e.segments = load_catalog_from(cfg, e.corpus);

    require(!cfg.paths.index.empty(), ErrorCode::validation, "config: paths.index is required");
    {
        auto in = open_input(cfg.paths.index, true);
        const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        e.index = deserialize_index(raw);
        e.index_crc = crc32(raw);
    }
    check_index_against(e.index, e.segments);

    if (!cfg.paths.frames.empty()) {
        auto m = open_input(cfg.paths.frames, true);
        auto i = open_input(cfg.paths.frame_ids);
        FrameStore store = load_frame_store(m, i, cfg.paths.frames);
        require(store.dim() == dim_of(e.index), ErrorCode::dimension_mismatch, "frame and index dimensions differ");
        store.validate(e.corpus);
        e.frames = std::move(store);
    }
    if (!cfg.paths.annotations.empty()) {
        auto in = open_input(cfg.paths.annotations);
        e.annotations = load_annotations(in, &e.corpus, cfg.paths.annotations);
    }
    if (!cfg.paths.queries.empty()) {
        auto m = open_input(cfg.paths.queries, true);
        auto i = open_input(cfg.paths.query_ids);
        EmbeddingTable q = load_embeddings(m, i, log, cfg.paths.queries);
        require(q.dim() == dim_of(e.index), ErrorCode::dimension_mismatch, "query and index dimensions differ");
        e.queries = std::move(q);
    }
    return e;
}

/// Runs every annotated query through the engine. Stored query embeddings
/// are used when present, otherwise the query text is embedded.
inline std::vector<RunRecord> run_engine_queries(const Engine& e, Stage stage,
                                                 std::vector<std::vector<Moment>>* proposals = nullptr) {
    require(e.annotations.has_value(), ErrorCode::validation, "config: paths.annotations is required");
    std::vector<RunRecord> run;
    const SearchContext ctx = e.context();
    const bool fine = stage == Stage::fine;
    for (const auto& [qid, ann] : e.annotations->entries()) {
        std::optional<std::size_t> row = e.queries ? e.queries->find(std::to_string(qid)) : std::nullopt;
        PipelineResult r = row ? run_pipeline(e.queries->row(*row), ctx, e.config.pipeline, fine)
                               : run_pipeline(std::string_view(ann.query), ctx, e.config.pipeline, fine);
        if (proposals != nullptr) {
            std::vector<Moment> list;
            for (const auto& p : r.proposals) list.push_back(p.moment());
            proposals->push_back(std::move(list));
        }
        run.push_back(RunRecord{qid, stage, fine ? std::move(r.fine) : std::move(r.coarse)});
    }
    return run;
}

// ---------------------------------------------------------------------------
// Bundles

/// Writes a synthetic bundle with an engine.json and a built index into `dir`.
inline EngineConfig write_bundle(const SyntheticBundle& b, const std::filesystem::path& dir,
                                 const IndexBuildParams& index_params) {
    std::filesystem::create_directories(dir);
    auto p = [&](const char* name) { return (dir / name).string(); };
    {
        auto out = open_output(p("videos.jsonl"));
        write_video_manifest(out, b.corpus);
    }
    {
        auto out = open_output(p("segments.jsonl"));
        write_segment_manifest(out, b.segments);
    }
    {
        auto m = open_output(p("segments.bin"), true);
        auto i = open_output(p("segments.ids.jsonl"));
        write_table(m, i, b.segment_embeddings);
    }
    {
        auto m = open_output(p("queries.bin"), true);
        auto i = open_output(p("queries.ids.jsonl"));
        write_table(m, i, b.query_embeddings);
    }
    {
        auto out = open_output(p("annotations.json"));
        write_annotations(out, b.annotations);
    }
    EngineConfig cfg;
    cfg.paths = EnginePaths{"videos.jsonl", "segments.jsonl", "segments.bin", "segments.ids.jsonl", "", "",
                            "annotations.json", "queries.bin", "queries.ids.jsonl", "index.spri"};
    if (b.config.keep_frames) {
        auto m = open_output(p("frames.bin"), true);
        auto i = open_output(p("frames.ids.jsonl"));
        write_frame_store(m, i, b.frames);
        cfg.paths.frames = "frames.bin";
        cfg.paths.frame_ids = "frames.ids.jsonl";
    }
    cfg.segmentation = b.config.segmentation;
    cfg.pipeline.embed_seed = b.config.embed_seed;
    cfg.index = index_params;
    {
        auto out = open_output(p("index.spri"), true);
        save_index(out, build_index(b.segment_embeddings, index_params));
    }
    {
        auto out = open_output(p("engine.json"));
        out << config_to_json(cfg).dump(2) << "\n";
    }
    return config_from_json(config_to_json(cfg), dir);
}

}  // namespace spr
