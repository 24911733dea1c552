#pragma once

#include <spr/bench.hpp>
#include <spr/corpus.hpp>
#include <spr/engine.hpp>
#include <spr/error.hpp>
#include <spr/evaluation.hpp>
#include <spr/index.hpp>
#include <spr/jsonl.hpp>
#include <spr/service.hpp>
#include <spr/synthetic.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace spr {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2 };

namespace detail {

inline Service* g_running_service = nullptr;

inline void stop_on_signal(int) {
    if (g_running_service != nullptr) g_running_service->stop();
}

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> overrides;

    EngineConfig load() const {
        json doc = read_config_document(config_path);
        for (const auto& [key, value] : overrides) apply_override(doc, key, value);
        return config_from_json(doc, config_base_dir(config_path));
    }
};

inline void add_config_flags(CLI::App& cmd, ConfigFlags& flags) {
    cmd.add_option("--config", flags.config_path, "Engine config file (default: $SPR_CONFIG)");
    for (const auto& key : config_keys()) {
        cmd.add_option_function<std::string>(
               "--" + key, [&flags, key](const std::string& v) { flags.overrides[key] = v; }, "Override " + key)
            ->group("Config overrides");
    }
}

inline void emit(std::ostream& out, const std::string& path, const json& doc) {
    if (path.empty() || path == "-") {
        out << doc.dump(2) << "\n";
        return;
    }
    auto f = open_output(path);
    f << doc.dump(2) << "\n";
}

inline std::vector<IndexKind> parse_kinds(const std::vector<std::string>& names) {
    std::vector<IndexKind> kinds;
    for (const auto& n : names) kinds.push_back(parse_index_kind(n));
    return kinds;
}

}  // namespace detail

/// Entry point of the `spr` tool. Returns 0 on success, 1 on usage errors
/// and 2 on data errors.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    CLI::App app{"Segment-proposal-ranking video moment retrieval"};
    app.name("spr");
    app.require_subcommand(1);

    // segment
    auto* seg = app.add_subcommand("segment", "Segment a video manifest into fixed-length segments");
    std::string seg_videos, seg_out = "-";
    SegmentationConfig seg_cfg;
    bool seg_drop_tail = false;
    seg->add_option("--videos", seg_videos, "Video manifest (JSONL)")->required();
    seg->add_option("--out", seg_out, "Segment manifest output (default stdout)");
    seg->add_option("--segment-length", seg_cfg.segment_length_s, "Segment length in seconds")
        ->check(CLI::PositiveNumber);
    seg->add_flag("--drop-tail", seg_drop_tail, "Drop the trailing partial segment");

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic planted-moment bundle");
    SyntheticBenchConfig syn;
    std::string gen_out, gen_kind = "flat";
    bool gen_zero = false, gen_no_frames = false;
    gen->add_option("--out", gen_out, "Bundle directory")->required();
    gen->add_option("--num-videos", syn.num_videos)->check(CLI::PositiveNumber);
    gen->add_option("--num-queries", syn.num_queries)->check(CLI::PositiveNumber);
    gen->add_option("--moments-per-query", syn.moments_per_query)->check(CLI::PositiveNumber);
    gen->add_option("--duration", syn.video_duration_s)->check(CLI::PositiveNumber);
    gen->add_option("--dim", syn.embedding_dim)->check(CLI::PositiveNumber);
    gen->add_option("--distractors", syn.distractor_multiplier, "Distractor multiplier");
    gen->add_option("--query-noise", syn.query_noise);
    gen->add_option("--seed", syn.seed);
    gen->add_option("--embed-seed", syn.embed_seed);
    gen->add_option("--index-kind", gen_kind, "Index written into the bundle");
    gen->add_flag("--zero-noise", gen_zero, "Set every noise level to zero");
    gen->add_flag("--no-frames", gen_no_frames, "Do not write the frame store");

    // index build
    auto* idx = app.add_subcommand("index", "Index operations");
    idx->require_subcommand(1);
    auto* build = idx->add_subcommand("build", "Build an index from segment embeddings");
    detail::ConfigFlags build_flags;
    std::string build_kind, build_out;
    build->add_option("--kind", build_kind, "flat | ivf | ivfpq");
    build->add_option("--out", build_out, "Index output (default: paths.index)");
    detail::add_config_flags(*build, build_flags);

    // search
    auto* srch = app.add_subcommand("search", "Run one query through the pipeline");
    detail::ConfigFlags search_flags;
    std::string query_text, search_stage = "fine";
    std::optional<std::size_t> search_k;
    std::size_t search_limit = 10;
    srch->add_option("--query", query_text, "Query text")->required();
    srch->add_option("--stage", search_stage, "coarse | fine");
    srch->add_option("--top-k-segments", search_k, "Retrieved segment count")->check(CLI::PositiveNumber);
    srch->add_option("--limit", search_limit, "Results printed (0: all)");
    detail::add_config_flags(*srch, search_flags);

    // run
    auto* runc = app.add_subcommand("run", "Run every annotated query and write a run file");
    detail::ConfigFlags run_flags;
    std::string run_stage = "fine", run_out = "-";
    runc->add_option("--stage", run_stage, "coarse | fine");
    runc->add_option("--out", run_out, "Run file output (default stdout)");
    detail::add_config_flags(*runc, run_flags);

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a run file with NDCG@K, IoU>=mu");
    std::string eval_run, eval_ann, eval_videos, eval_stage, eval_out;
    EvalConfig eval_cfg;
    bool eval_summary = false;
    ev->add_option("--run", eval_run, "Run file (JSONL)")->required();
    ev->add_option("--annotations", eval_ann, "Annotation document")->required();
    ev->add_option("--videos", eval_videos, "Video manifest used to validate annotations");
    ev->add_option("--stage", eval_stage, "Only evaluate records of this stage");
    ev->add_option("--cutoffs", eval_cfg.cutoffs, "K values")->delimiter(',');
    ev->add_option("--ious", eval_cfg.iou_thresholds, "IoU thresholds")->delimiter(',');
    ev->add_option("--out", eval_out, "Report output (default stdout)");
    ev->add_flag("--summary", eval_summary, "Omit the per-query breakdown");

    // bound
    auto* bnd = app.add_subcommand("bound", "Upper bounds of NDCG over the coarse proposals");
    detail::ConfigFlags bound_flags;
    std::string bound_mode, bound_run, bound_out;
    std::optional<double> bound_scale, bound_padding;
    bnd->add_option("--mode", bound_mode, "ub | pub")->required();
    bnd->add_option("--time-scale", bound_scale, "Minimum time scale in seconds (pub)");
    bnd->add_option("--padding", bound_padding, "Context padding (default: refine.context_padding_s)");
    bnd->add_option("--run", bound_run, "Coarse run file (default: run the engine)");
    bnd->add_option("--out", bound_out, "Report output (default stdout)");
    detail::add_config_flags(*bnd, bound_flags);

    // bench
    auto* bch = app.add_subcommand("bench", "Latency/scalability bench and k sweep on synthetic corpora");
    BenchConfig bench;
    std::vector<std::string> bench_kinds{"flat", "ivf"};
    std::string bench_out;
    bool bench_no_sweep = false;
    bch->add_option("--sizes", bench.sizes, "Corpus scale factors")->delimiter(',');
    bch->add_option("--kinds", bench_kinds, "Index kinds")->delimiter(',');
    bch->add_option("--repetitions", bench.repetitions)->check(CLI::PositiveNumber);
    bch->add_option("--num-videos", bench.base.num_videos)->check(CLI::PositiveNumber);
    bch->add_option("--num-queries", bench.base.num_queries)->check(CLI::PositiveNumber);
    bch->add_option("--dim", bench.base.embedding_dim)->check(CLI::PositiveNumber);
    bch->add_option("--seed", bench.base.seed);
    bch->add_option("--top-k-segments", bench.top_k_segments)->check(CLI::PositiveNumber);
    bch->add_option("--nprobe", bench.nprobe)->check(CLI::PositiveNumber);
    bch->add_option("--nlist", bench.index.nlist);
    bch->add_option("--m", bench.index.m);
    bch->add_option("--nbits", bench.index.nbits);
    bch->add_option("--k-sweep", bench.k_sweep, "Retrieved segment counts for the sweep")->delimiter(',');
    bch->add_flag("--no-sweep", bench_no_sweep);
    bch->add_option("--out", bench_out, "Report output (default stdout)");

    // serve
    auto* srv = app.add_subcommand("serve", "Serve the HTTP API");
    detail::ConfigFlags serve_flags;
    std::string serve_addr;
    srv->add_option("--addr", serve_addr, "host:port (default: service.addr)");
    detail::add_config_flags(*srv, serve_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const CLI::App* failing = &app;
        for (auto* sub : app.get_subcommands()) {
            failing = sub;
            for (auto* inner : sub->get_subcommands()) failing = inner;
        }
        err << failing->help();
        return kExitUsage;
    }

    try {
        if (seg->parsed()) {
            seg_cfg.keep_partial_tail = !seg_drop_tail;
            auto in = open_input(seg_videos);
            Corpus corpus = load_video_manifest(in, seg_videos);
            corpus.seal();
            const SegmentCatalog catalog = segment_corpus(corpus, seg_cfg);
            if (seg_out == "-") {
                write_segment_manifest(out, catalog);
            } else {
                auto f = open_output(seg_out);
                write_segment_manifest(f, catalog);
            }
            err << "wrote " << catalog.size() << " segments for " << corpus.size() << " videos\n";
            return kExitOk;
        }
        if (gen->parsed()) {
            if (gen_zero) syn.set_zero_noise();
            syn.keep_frames = !gen_no_frames;
            IndexBuildParams ip;
            ip.kind = parse_index_kind(gen_kind);
            const SyntheticBundle bundle = generate_synthetic_corpus(syn);
            write_bundle(bundle, gen_out, ip);
            err << "wrote bundle to " << gen_out << ": " << bundle.corpus.size() << " videos, "
                << bundle.segments.size() << " segments, " << bundle.annotations.size() << " queries\n";
            return kExitOk;
        }
        if (build->parsed()) {
            EngineConfig cfg = build_flags.load();
            if (!build_kind.empty()) cfg.index.kind = parse_index_kind(build_kind);
            const std::string target = build_out.empty() ? cfg.paths.index : build_out;
            require(!target.empty(), ErrorCode::invalid_argument, "no index output: pass --out or set paths.index");
            const VectorIndex index = build_index_from(cfg, &err);
            auto f = open_output(target, true);
            save_index(f, index);
            err << "built " << to_string(kind_of(index)) << " index over " << size_of(index) << " rows -> "
                << target << "\n";
            return kExitOk;
        }
        if (srch->parsed()) {
            const Stage stage = parse_stage(search_stage);
            EngineConfig cfg = search_flags.load();
            if (search_k) cfg.pipeline.retrieval.top_k_segments = *search_k;
            const Engine engine = load_engine(cfg, &err);
            json body{{"query", query_text}, {"stage", std::string(to_string(stage))}};
            const HttpReply reply = handle_search(&engine, body.dump());
            if (reply.status != 200) {
                err << "error: " << reply.body.value("error", "search failed") << "\n";
                return reply.status == 400 ? kExitUsage : kExitData;
            }
            json doc = reply.body;
            if (search_limit > 0 && doc["results"].size() > search_limit) {
                json trimmed = json::array();
                for (std::size_t i = 0; i < search_limit; ++i) trimmed.push_back(doc["results"][i]);
                doc["results"] = std::move(trimmed);
            }
            out << doc.dump(2) << "\n";
            return kExitOk;
        }
        if (runc->parsed()) {
            const Stage stage = parse_stage(run_stage);
            const Engine engine = load_engine(run_flags.load(), &err);
            const auto run = run_engine_queries(engine, stage);
            if (run_out == "-") {
                write_run(out, run);
            } else {
                auto f = open_output(run_out);
                write_run(f, run);
            }
            return kExitOk;
        }
        if (ev->parsed()) {
            std::optional<Stage> stage;
            if (!eval_stage.empty()) stage = parse_stage(eval_stage);
            eval_cfg.validate();
            std::optional<Corpus> corpus;
            if (!eval_videos.empty()) {
                auto in = open_input(eval_videos);
                corpus = load_video_manifest(in, eval_videos);
            }
            auto ain = open_input(eval_ann);
            const AnnotationSet ann = load_annotations(ain, corpus ? &*corpus : nullptr, eval_ann);
            auto rin = open_input(eval_run);
            const auto run = read_run(rin, eval_run);
            detail::emit(out, eval_out, report_to_json(evaluate_run(run, ann, eval_cfg, stage), !eval_summary));
            return kExitOk;
        }
        if (bnd->parsed()) {
            require(bound_mode == "ub" || bound_mode == "pub", ErrorCode::invalid_argument, "--mode must be ub or pub");
            BoundConfig bc;
            if (bound_mode == "pub") {
                require(bound_scale.has_value() && *bound_scale > 0.0, ErrorCode::invalid_argument,
                        "--mode pub needs a positive --time-scale");
                bc.min_time_scale_s = bound_scale;
            }
            EngineConfig cfg = bound_flags.load();
            bc.context_padding_s = bound_padding.value_or(cfg.pipeline.refine.context_padding_s);
            std::map<std::int64_t, std::vector<Moment>> proposals;
            const Corpus corpus = load_corpus_from(cfg);
            require(!cfg.paths.annotations.empty(), ErrorCode::validation, "config: paths.annotations is required");
            auto ain = open_input(cfg.paths.annotations);
            const AnnotationSet ann = load_annotations(ain, &corpus, cfg.paths.annotations);
            if (!bound_run.empty()) {
                auto rin = open_input(bound_run);
                for (const auto& r : read_run(rin, bound_run)) {
                    if (r.stage != Stage::coarse) continue;
                    auto& list = proposals[r.query_id];
                    for (const auto& m : r.results) list.push_back(m.moment);
                }
            } else {
                cfg.paths.frames.clear();
                cfg.paths.frame_ids.clear();
                const Engine engine = load_engine(cfg, &err);
                for (const auto& r : run_engine_queries(engine, Stage::coarse)) {
                    auto& list = proposals[r.query_id];
                    for (const auto& m : r.results) list.push_back(m.moment);
                }
            }
            json doc = report_to_json(bound_report(proposals, ann, corpus, EvalConfig{}, bc));
            doc["mode"] = bound_mode;
            doc["context_padding_s"] = bc.context_padding_s;
            if (bc.min_time_scale_s) doc["min_time_scale_s"] = *bc.min_time_scale_s;
            detail::emit(out, bound_out, doc);
            return kExitOk;
        }
        if (bch->parsed()) {
            bench.kinds = detail::parse_kinds(bench_kinds);
            bench.run_sweep = !bench_no_sweep;
            detail::emit(out, bench_out, bench_to_json(run_bench(bench)));
            return kExitOk;
        }
        if (srv->parsed()) {
            EngineConfig cfg = serve_flags.load();
            if (!serve_addr.empty()) cfg.service.addr = serve_addr;
            Service service(cfg.service);
            const int port = service.bind(cfg.service.addr);
            std::thread listener([&] { service.listen(); });
            service.wait_until_ready();
            try {
                service.set_engine(std::make_shared<const Engine>(load_engine(cfg, &err)));
            } catch (...) {
                service.stop();
                listener.join();
                throw;
            }
            detail::g_running_service = &service;
            std::signal(SIGINT, detail::stop_on_signal);
            std::signal(SIGTERM, detail::stop_on_signal);
            err << "listening on " << cfg.service.addr.substr(0, cfg.service.addr.rfind(':')) << ":" << port
                << std::endl;
            out << "port " << port << std::endl;
            listener.join();
            detail::g_running_service = nullptr;
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::invalid_argument ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace spr
