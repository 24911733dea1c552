#pragma once

#include <spr/embedding.hpp>
#include <spr/error.hpp>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace spr {

struct KMeansConfig {
    std::size_t k = 1;
    std::size_t max_iters = 25;
    double rel_improvement_eps = 1e-4;
    std::uint64_t seed = 1234;
};

struct Codebook {
    std::size_t dim = 0;
    std::vector<float> centroids;  // k x dim, row-major
    double inertia = 0.0;

    std::size_t size() const { return dim == 0 ? 0 : centroids.size() / dim; }
    std::span<const float> centroid(std::size_t c) const { return {centroids.data() + c * dim, dim}; }
    MatrixView view() const { return MatrixView{centroids, size(), dim}; }

    bool operator==(const Codebook&) const = default;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct Assignment {
    std::vector<std::size_t> label;
    std::vector<double> dist2;
    double inertia = 0.0;
};

inline std::size_t nearest_l2(std::span<const float> x, const MatrixView& centroids, double* best_out) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows; ++c) {
        const double d = squared_l2(x, centroids.row(c));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (best_out != nullptr) {
        *best_out = best_d;
    }
    return best;
}

inline Assignment assign(const MatrixView& points, const MatrixView& centroids) {
    Assignment a;
    a.label.resize(points.rows);
    a.dist2.resize(points.rows);
    for (std::size_t i = 0; i < points.rows; ++i) {
        a.label[i] = nearest_l2(points.row(i), centroids, &a.dist2[i]);
        a.inertia += a.dist2[i];
    }
    return a;
}

// k-means++ seeding: first centre uniform, the rest by D^2 sampling. When
// every point already coincides with a centre, fall back to uniform picks.
inline std::vector<float> plus_plus_init(const MatrixView& points, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = points.rows;
    std::vector<float> centres;
    centres.reserve(k * points.dim);
    auto push = [&](std::size_t i) {
        auto r = points.row(i);
        centres.insert(centres.end(), r.begin(), r.end());
    };
    push(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n);
    std::vector<double> d2(n);
    const auto first = std::span<const float>(centres.data(), points.dim);
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = squared_l2(points.row(i), first);
    }
    while (centres.size() < k * points.dim) {
        double total = 0.0;
        for (double d : d2) {
            total += d;
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
        } else {
            const double target = uniform01(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            // Rounding can leave acc <= target; take the last positive-weight point.
            if (d2[pick] <= 0.0) {
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        }
        push(pick);
        auto added = std::span<const float>(centres.data() + centres.size() - points.dim, points.dim);
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_l2(points.row(i), added));
        }
    }
    return centres;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. Stops after `max_iters` updates or
/// when the relative inertia improvement drops below `rel_improvement_eps`.
/// An empty cluster is re-seeded with the point farthest from its centroid.
/// Deterministic given `cfg.seed`.
inline Codebook kmeans(const MatrixView& points, const KMeansConfig& cfg) {
    require(cfg.k >= 1, ErrorCode::invalid_argument, "k must be positive");
    require(points.rows >= cfg.k, ErrorCode::invalid_argument,
            "k-means needs at least k points (k=" + std::to_string(cfg.k) + ", n=" + std::to_string(points.rows) + ")");
    require(points.dim > 0, ErrorCode::invalid_argument, "zero-dimensional points");

    std::mt19937_64 rng(cfg.seed);
    Codebook book;
    book.dim = points.dim;
    book.centroids = detail::plus_plus_init(points, cfg.k, rng);

    auto a = detail::assign(points, book.view());
    const std::size_t dim = points.dim;
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        std::vector<double> sums(cfg.k * dim, 0.0);
        std::vector<std::size_t> counts(cfg.k, 0);
        for (std::size_t i = 0; i < points.rows; ++i) {
            const std::size_t c = a.label[i];
            ++counts[c];
            auto r = points.row(i);
            for (std::size_t j = 0; j < dim; ++j) {
                sums[c * dim + j] += r[j];
            }
        }
        std::vector<bool> taken(points.rows, false);
        for (std::size_t c = 0; c < cfg.k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t j = 0; j < dim; ++j) {
                    book.centroids[c * dim + j] = static_cast<float>(sums[c * dim + j] / static_cast<double>(counts[c]));
                }
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < points.rows; ++i) {
                if (!taken[i] && a.dist2[i] > far_d) {
                    far_d = a.dist2[i];
                    far = i;
                }
            }
            taken[far] = true;
            a.dist2[far] = 0.0;
            auto r = points.row(far);
            std::copy(r.begin(), r.end(), book.centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
        }
        const double previous = a.inertia;
        a = detail::assign(points, book.view());
        if (previous <= 0.0 || (previous - a.inertia) / previous < cfg.rel_improvement_eps) {
            break;
        }
    }
    book.inertia = a.inertia;
    return book;
}

}  // namespace spr
