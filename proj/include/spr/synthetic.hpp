#pragma once

#include <spr/corpus.hpp>
#include <spr/embedding.hpp>
#include <spr/error.hpp>
#include <spr/kmeans.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace spr {

/// Planted-moment benchmark. Every query owns a latent direction (the toy
/// text embedding of its query string); frames inside a moment of relevance
/// r are the latent perturbed by noise of relative magnitude sigma_r, every
/// other frame is an independent random direction.
struct SyntheticBenchConfig {
    std::size_t num_videos = 50;
    double video_duration_s = 76.0;
    std::size_t embedding_dim = 64;
    std::size_t num_queries = 20;
    std::size_t moments_per_query = 1;
    std::map<int, double> relevance_noise = {{4, 0.05}, {3, 0.15}, {2, 0.30}, {1, 0.50}};
    double query_noise = 0.05;
    std::size_t distractor_multiplier = 0;
    std::size_t min_moment_s = 4;
    std::size_t max_moment_s = 14;
    bool keep_frames = true;
    std::uint64_t seed = 7;
    std::uint64_t embed_seed = 0;
    SegmentationConfig segmentation;

    void set_zero_noise() {
        for (auto& [rel, sigma] : relevance_noise) {
            sigma = 0.0;
        }
        query_noise = 0.0;
    }

    void validate() const {
        require(num_videos > 0 && num_queries > 0 && moments_per_query > 0 && embedding_dim > 0,
                ErrorCode::invalid_argument, "synthetic config: counts must be positive");
        require(video_duration_s > 0.0, ErrorCode::invalid_argument, "synthetic config: duration must be positive");
        require(min_moment_s >= 1 && min_moment_s <= max_moment_s &&
                    static_cast<double>(max_moment_s) <= std::floor(video_duration_s),
                ErrorCode::invalid_argument, "synthetic config: moment length range must fit in a video");
        for (int r = kMinRelevance; r <= kMaxRelevance; ++r) {
            require(relevance_noise.contains(r) && relevance_noise.at(r) >= 0.0, ErrorCode::invalid_argument,
                    "synthetic config: missing or negative noise for relevance " + std::to_string(r));
        }
        // Non-strict so the all-zero (noise-free) configuration stays valid.
        for (int r = kMinRelevance; r < kMaxRelevance; ++r) {
            require(relevance_noise.at(r + 1) <= relevance_noise.at(r), ErrorCode::invalid_argument,
                    "synthetic config: noise must decrease with relevance");
        }
        require(query_noise >= 0.0, ErrorCode::invalid_argument, "synthetic config: negative query noise");
    }
};

struct SyntheticBundle {
    SyntheticBenchConfig config;
    Corpus corpus;
    SegmentCatalog segments;
    FrameStore frames;
    EmbeddingTable segment_embeddings;
    EmbeddingTable query_embeddings;  // ids are decimal query ids
    AnnotationSet annotations;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    return std::mt19937_64(splitmix64(splitmix64(seed ^ tag) + index));
}

// Box-Muller over a fully specified engine so output is identical everywhere.
inline double gaussian(std::mt19937_64& rng) {
    double u1 = 0.0;
    do {
        u1 = uniform01(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::vector<double> random_direction(std::mt19937_64& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = gaussian(rng);
            norm += x * x;
        }
    } while (norm <= 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) {
        x /= norm;
    }
    return v;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// normalize(base + sigma * noise), computed in double.
inline std::vector<float> perturb(std::span<const float> base, double sigma, const std::vector<double>& noise) {
    std::vector<double> v(base.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        v[i] = static_cast<double>(base[i]) + sigma * noise[i];
        norm += v[i] * v[i];
    }
    norm = std::sqrt(norm);
    require(norm > 0.0, ErrorCode::invalid_argument, "synthetic noise cancelled the latent");
    std::vector<float> out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        out[i] = static_cast<float>(v[i] / norm);
    }
    return out;
}

inline std::string random_token(std::mt19937_64& rng) {
    std::string token(6, 'a');
    for (char& c : token) {
        c = static_cast<char>('a' + uniform_index(rng, 26));
    }
    return token;
}

struct Planted {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t query = 0;
    int relevance = 0;
};

inline constexpr std::uint64_t kQueryStream = 0x51;
inline constexpr std::uint64_t kPlacementStream = 0x52;
inline constexpr std::uint64_t kVideoStream = 0x53;
inline constexpr std::uint64_t kDistractorStream = 0x54;

}  // namespace detail

inline std::string video_name(std::size_t i) {
    std::string digits = std::to_string(i);
    return "v" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

inline std::string distractor_name(std::size_t i) {
    std::string digits = std::to_string(i);
    return "d" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

/// Deterministic in `cfg.seed`. Base videos, queries and placements use
/// their own random streams, so adding distractors leaves them unchanged.
inline SyntheticBundle generate_synthetic_corpus(const SyntheticBenchConfig& cfg) {
    cfg.validate();
    const std::size_t dim = cfg.embedding_dim;
    SyntheticBundle b;
    b.config = cfg;
    b.frames = FrameStore(dim);
    b.segment_embeddings = EmbeddingTable(dim);
    b.query_embeddings = EmbeddingTable(dim);

    // Queries and their latents.
    auto qrng = detail::stream(cfg.seed, detail::kQueryStream, 0);
    std::vector<std::string> texts(cfg.num_queries);
    std::vector<Embedding> latents(cfg.num_queries);
    for (std::size_t q = 0; q < cfg.num_queries; ++q) {
        std::string text;
        for (int t = 0; t < 8; ++t) {
            text += (t ? " " : "") + detail::random_token(qrng);
        }
        texts[q] = text;
        latents[q] = embed_text_toy(texts[q], dim, cfg.embed_seed);
        const auto noise = detail::random_direction(qrng, dim);
        const auto emb = detail::perturb(latents[q], cfg.query_noise, noise);
        b.query_embeddings.add(std::to_string(q + 1), emb);
    }

    // Non-overlapping planted intervals on whole seconds.
    auto prng = detail::stream(cfg.seed, detail::kPlacementStream, 0);
    const auto whole = static_cast<std::size_t>(std::floor(cfg.video_duration_s));
    std::vector<std::vector<detail::Planted>> planted(cfg.num_videos);
    std::vector<QueryAnnotation> entries(cfg.num_queries);
    for (std::size_t q = 0; q < cfg.num_queries; ++q) {
        entries[q].query_id = static_cast<std::int64_t>(q + 1);
        entries[q].query = texts[q];
        for (std::size_t j = 0; j < cfg.moments_per_query; ++j) {
            const int rel = j == 0 ? kMaxRelevance : static_cast<int>(1 + detail::uniform_index(prng, 4));
            bool placed = false;
            for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                const std::size_t v = detail::uniform_index(prng, cfg.num_videos);
                const std::size_t len =
                    cfg.min_moment_s + detail::uniform_index(prng, cfg.max_moment_s - cfg.min_moment_s + 1);
                const std::size_t start = detail::uniform_index(prng, whole - len + 1);
                const std::size_t end = start + len;
                bool clash = false;
                for (const auto& p : planted[v]) {
                    clash = clash || (start < p.end && p.start < end);
                }
                if (clash) {
                    continue;
                }
                planted[v].push_back(detail::Planted{start, end, q, rel});
                entries[q].moments.push_back(GroundTruthMoment{
                    Moment{video_name(v), static_cast<double>(start), static_cast<double>(end)}, rel});
                placed = true;
            }
            require(placed, ErrorCode::invalid_argument, "synthetic config: corpus too small to place all moments");
        }
    }

    const auto frames_per_video = static_cast<std::size_t>(std::ceil(cfg.video_duration_s - 1e-9));

    // Noise directions for distractors are projected off the span of the
    // query latents so that they are orthogonal to every latent.
    std::vector<std::vector<double>> basis;
    if (cfg.num_queries < dim) {
        for (const auto& latent : latents) {
            std::vector<double> v(latent.begin(), latent.end());
            for (const auto& e : basis) {
                double p = 0.0;
                for (std::size_t i = 0; i < dim; ++i) p += v[i] * e[i];
                for (std::size_t i = 0; i < dim; ++i) v[i] -= p * e[i];
            }
            double n = 0.0;
            for (double x : v) n += x * x;
            n = std::sqrt(n);
            if (n > 1e-9) {
                for (double& x : v) x /= n;
                basis.push_back(std::move(v));
            }
        }
    }

    auto emit_video = [&](const std::string& id, std::mt19937_64& rng, const std::vector<detail::Planted>& moments,
                          bool orthogonal) {
        const VideoMeta& video = b.corpus.register_video(id, cfg.video_duration_s);
        std::vector<float> frames(frames_per_video * dim);
        for (std::size_t t = 0; t < frames_per_video; ++t) {
            auto noise = detail::random_direction(rng, dim);
            const detail::Planted* owner = nullptr;
            for (const auto& p : moments) {
                if (t >= p.start && t < p.end) owner = &p;
            }
            std::vector<float> f;
            if (owner != nullptr) {
                f = detail::perturb(latents[owner->query], cfg.relevance_noise.at(owner->relevance), noise);
            } else {
                if (orthogonal) {
                    for (const auto& e : basis) {
                        double p = 0.0;
                        for (std::size_t i = 0; i < dim; ++i) p += noise[i] * e[i];
                        for (std::size_t i = 0; i < dim; ++i) noise[i] -= p * e[i];
                    }
                }
                const std::vector<float> zero(dim, 0.0f);
                f = detail::perturb(zero, 1.0, noise);
            }
            std::copy(f.begin(), f.end(), frames.begin() + static_cast<std::ptrdiff_t>(t * dim));
        }
        for (Segment& s : segment_video(video, cfg.segmentation)) {
            auto [first, last] = FrameStore::frame_range(s.start_s, s.end_s, frames_per_video);
            std::vector<double> mean(dim, 0.0);
            for (std::size_t t = first; t < last; ++t) {
                for (std::size_t i = 0; i < dim; ++i) mean[i] += frames[t * dim + i];
            }
            std::vector<float> pooled(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                pooled[i] = static_cast<float>(mean[i] / static_cast<double>(last - first));
            }
            b.segment_embeddings.add(s.segment_id, pooled);
            b.segments.add(std::move(s));
        }
        if (cfg.keep_frames) {
            b.frames.add_video(id, std::move(frames));
        }
    };

    for (std::size_t v = 0; v < cfg.num_videos; ++v) {
        auto vrng = detail::stream(cfg.seed, detail::kVideoStream, v);
        emit_video(video_name(v), vrng, planted[v], false);
    }
    const std::vector<detail::Planted> none;
    for (std::size_t d = 0; d < cfg.distractor_multiplier * cfg.num_videos; ++d) {
        auto drng = detail::stream(cfg.seed, detail::kDistractorStream, d);
        emit_video(distractor_name(d), drng, none, true);
    }

    for (auto& entry : entries) {
        b.annotations.add(std::move(entry));
    }
    b.segment_embeddings.seal();
    b.query_embeddings.seal();
    b.corpus.seal();
    return b;
}

}  // namespace spr
