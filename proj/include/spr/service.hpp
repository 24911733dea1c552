#pragma once

#include <spr/engine.hpp>
#include <spr/error.hpp>
#include <spr/evaluation.hpp>
#include <spr/jsonl.hpp>
#include <spr/pipeline.hpp>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

namespace spr {

struct HttpReply {
    int status = 200;
    json body;
};

namespace detail {

inline HttpReply error_reply(int status, const std::string& message) {
    return HttpReply{status, json{{"error", message}}};
}

inline double ms(double seconds) { return seconds * 1000.0; }

inline json moments_to_json(const std::vector<RankedMoment>& list) {
    json out = json::array();
    for (const auto& m : list) {
        out.push_back({{"video_id", m.moment.video_id},
                       {"start_s", m.moment.start_s},
                       {"end_s", m.moment.end_s},
                       {"score", m.score},
                       {"rank", m.rank},
                       {"stage", std::string(to_string(m.stage))}});
    }
    return out;
}

inline std::string hex32(std::uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(8, '0');
    for (int i = 7; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

}  // namespace detail

/// POST /api/v1/search. `engine` is null while loading.
inline HttpReply handle_search(const Engine* engine, const std::string& body) {
    using detail::error_reply;
    if (engine == nullptr) return error_reply(503, "engine not ready");
    const json req = json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object()) return error_reply(400, "malformed body: expected a JSON object");

    Stage stage = Stage::fine;
    if (req.contains("stage")) {
        if (!req["stage"].is_string()) return error_reply(400, "'stage' must be \"coarse\" or \"fine\"");
        const auto s = req["stage"].get<std::string>();
        if (s != "coarse" && s != "fine") return error_reply(400, "'stage' must be \"coarse\" or \"fine\"");
        stage = parse_stage(s);
    }
    if (stage == Stage::fine && !engine->frames) return error_reply(400, "fine stage unavailable: no frame store");

    PipelineConfig cfg = engine->config.pipeline;
    if (req.contains("top_k_segments")) {
        const auto& k = req["top_k_segments"];
        if (!k.is_number_integer() || k.get<std::int64_t>() < 1) {
            return error_reply(400, "'top_k_segments' must be a positive integer");
        }
        cfg.retrieval.top_k_segments = k.get<std::size_t>();
    }

    const std::size_t dim = dim_of(engine->index);
    Embedding query;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (req.contains("embedding")) {
            const auto& e = req["embedding"];
            if (!e.is_array()) return error_reply(400, "'embedding' must be an array of numbers");
            for (const auto& v : e) {
                if (!v.is_number()) return error_reply(400, "'embedding' must be an array of numbers");
                query.push_back(v.get<float>());
            }
            if (query.size() != dim) {
                return error_reply(400, "dimension mismatch: embedding has " + std::to_string(query.size()) +
                                            " values, index dimension is " + std::to_string(dim));
            }
            query = normalize(query);
        } else if (req.contains("query")) {
            if (!req["query"].is_string()) return error_reply(400, "'query' must be a string");
            const auto text = req["query"].get<std::string>();
            if (tokenize(text).empty()) return error_reply(400, "empty query");
            query = embed_text_toy(text, dim, cfg.embed_seed);
        } else {
            return error_reply(400, "request needs 'query' or 'embedding'");
        }
    } catch (const Error& e) {
        return error_reply(400, e.what());
    }
    const double embed_s = detail::seconds_since(t0);

    PipelineResult r;
    try {
        r = run_pipeline(std::span<const float>(query), engine->context(), cfg, stage == Stage::fine);
    } catch (const Error& e) {
        return error_reply(e.code() == ErrorCode::invalid_argument ? 400 : 500, e.what());
    }
    r.timings.query_embed_s = embed_s;
    const auto& results = stage == Stage::fine ? r.fine : r.coarse;
    return HttpReply{200, json{{"stage", std::string(to_string(stage))},
                               {"num_results", results.size()},
                               {"results", detail::moments_to_json(results)},
                               {"timings_ms",
                                {{"query_embed", detail::ms(r.timings.query_embed_s)},
                                 {"segment_retrieval", detail::ms(r.timings.segment_retrieval_s)},
                                 {"proposal_generation", detail::ms(r.timings.proposal_generation_s)},
                                 {"refine_rerank", detail::ms(r.timings.refine_rerank_s)}}},
                               {"engine_version", std::string(kEngineVersion)},
                               {"index_version", detail::hex32(engine->index_crc)}}};
}

inline HttpReply handle_health(const Engine* engine) {
    if (engine == nullptr) return HttpReply{503, json{{"status", "loading"}}};
    return HttpReply{200, json{{"status", "ok"}}};
}

inline HttpReply handle_stats(const Engine* engine) {
    if (engine == nullptr) return detail::error_reply(503, "engine not ready");
    const auto& e = *engine;
    return HttpReply{200, json{{"num_videos", e.corpus.size()},
                               {"num_segments", e.segments.size()},
                               {"index",
                                {{"kind", std::string(to_string(kind_of(e.index)))},
                                 {"dim", dim_of(e.index)},
                                 {"size", size_of(e.index)},
                                 {"nlist", nlist_of(e.index)},
                                 {"version", detail::hex32(e.index_crc)}}},
                               {"frames", e.frames.has_value()},
                               {"num_queries", e.annotations ? e.annotations->size() : 0},
                               {"engine_version", std::string(kEngineVersion)},
                               {"config", config_to_json(e.config)}}};
}

/// POST /api/v1/evaluate. Only one evaluation runs at a time; `busy` is the
/// gate shared by all requests.
inline HttpReply handle_evaluate(const Engine* engine, const std::string& body, std::atomic<bool>& busy) {
    using detail::error_reply;
    if (engine == nullptr) return error_reply(503, "engine not ready");
    const json req = json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object() || !req.contains("run_path") || !req["run_path"].is_string()) {
        return error_reply(400, "malformed body: expected {\"run_path\": string}");
    }
    std::optional<Stage> stage;
    if (req.contains("stage")) {
        if (!req["stage"].is_string()) return error_reply(400, "'stage' must be a string");
        try {
            stage = parse_stage(req["stage"].get<std::string>());
        } catch (const Error& e) {
            return error_reply(400, e.what());
        }
    }
    bool expected = false;
    if (!busy.compare_exchange_strong(expected, true)) return error_reply(409, "an evaluation is already running");
    struct Release {
        std::atomic<bool>& flag;
        ~Release() { flag.store(false); }
    } release{busy};

    if (!engine->annotations) return error_reply(404, "no annotations loaded");
    const auto path = req["run_path"].get<std::string>();
    if (!std::filesystem::is_regular_file(path)) return error_reply(404, "run file not found: " + path);
    try {
        auto in = open_input(path);
        const auto run = read_run(in, path);
        const EvalReport report = evaluate_run(run, *engine->annotations, EvalConfig{}, stage);
        return HttpReply{200, report_to_json(report)};
    } catch (const Error& e) {
        return error_reply(400, e.what());
    }
}

/// HTTP front end over a shared immutable engine.
class Service {
public:
    explicit Service(ServiceConfig cfg = {}) : cfg_(std::move(cfg)) {
        const auto deadline = std::chrono::duration<double>(cfg_.deadline_s);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(deadline).count();
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(deadline).count() % 1000000;
        server_.set_read_timeout(secs, usecs);
        server_.set_write_timeout(secs, usecs);
        const std::size_t threads = cfg_.threads;
        server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            const HttpReply reply = dispatch(req.method, req.path, req.body);
            res.status = reply.status;
            res.set_content(reply.body.dump(), "application/json");
        };
        server_.Get(".*", handler);
        server_.Post(".*", handler);
        server_.Put(".*", handler);
        server_.Delete(".*", handler);
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void set_engine(std::shared_ptr<const Engine> engine) {
        std::lock_guard lock(mu_);
        engine_ = std::move(engine);
    }

    std::shared_ptr<const Engine> engine() const {
        std::lock_guard lock(mu_);
        return engine_;
    }

    std::atomic<bool>& evaluate_gate() { return evaluating_; }

    HttpReply dispatch(const std::string& method, const std::string& path, const std::string& body) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto engine = this->engine();
        HttpReply reply;
        if (method == "GET" && path == "/api/v1/health") {
            reply = handle_health(engine.get());
        } else if (method == "GET" && path == "/api/v1/stats") {
            reply = handle_stats(engine.get());
        } else if (method == "POST" && path == "/api/v1/search") {
            reply = handle_search(engine.get(), body);
        } else if (method == "POST" && path == "/api/v1/evaluate") {
            reply = handle_evaluate(engine.get(), body, evaluating_);
        } else {
            return detail::error_reply(404, "unknown route: " + method + " " + path);
        }
        if (detail::seconds_since(t0) > cfg_.deadline_s) {
            return detail::error_reply(503, "deadline exceeded");
        }
        return reply;
    }

    /// Binds "host:port" (port 0 picks a free one) and returns the port.
    int bind(const std::string& addr) {
        const auto colon = addr.rfind(':');
        require(colon != std::string::npos, ErrorCode::invalid_argument, "address must be host:port");
        const std::string host = addr.substr(0, colon);
        int port = 0;
        try {
            port = std::stoi(addr.substr(colon + 1));
        } catch (const std::exception&) {
            fail(ErrorCode::invalid_argument, "bad port in '" + addr + "'");
        }
        if (port == 0) {
            port = server_.bind_to_any_port(host);
            require(port > 0, ErrorCode::io, "cannot bind " + addr);
        } else {
            require(server_.bind_to_port(host, port), ErrorCode::io, "cannot bind " + addr);
        }
        return port;
    }

    bool listen() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }

private:
    ServiceConfig cfg_;
    httplib::Server server_;
    mutable std::mutex mu_;
    std::shared_ptr<const Engine> engine_;
    std::atomic<bool> evaluating_{false};
};

}  // namespace spr
