#include "etree/kmeans.hpp"

#include "etree/error.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace etree {

double squared_distance(std::span<const float> a, std::span<const float> b) noexcept {
    const float* x = a.data();
    const float* y = b.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        sum += diff * diff;
    }
    return sum;
}

std::size_t nearest_centroid(std::span<const float> centroids, std::size_t dim,
                             std::span<const float> x, double* distance) {
    const std::size_t k = centroids.size() / dim;
    const float* c = centroids.data();
    const float* v = x.data();
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j, c += dim) {
        double d = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double diff = static_cast<double>(v[i]) - static_cast<double>(c[i]);
            d += diff * diff;
        }
        if (d < best_dist) {
            best_dist = d;
            best = j;
        }
    }
    if (distance != nullptr) {
        *distance = best_dist;
    }
    return best;
}

CentroidScanner::CentroidScanner(std::span<const float> centroids, std::size_t dim)
    : dim_(dim), count_(dim == 0 ? 0 : centroids.size() / dim), transposed_(centroids.size()) {
    for (std::size_t c = 0; c < count_; ++c) {
        for (std::size_t i = 0; i < dim_; ++i) {
            transposed_[i * count_ + c] = centroids[c * dim_ + i];
        }
    }
}

std::size_t CentroidScanner::nearest(std::span<const float> x, double* distance) const {
    std::array<double, 256> local{};
    std::vector<double> heap;
    double* acc = local.data();
    if (count_ > local.size()) {
        heap.assign(count_, 0.0);
        acc = heap.data();
    }
    std::fill(acc, acc + count_, 0.0);
    const float* t = transposed_.data();
    for (std::size_t i = 0; i < dim_; ++i, t += count_) {
        const double v = x[i];
        for (std::size_t c = 0; c < count_; ++c) {
            const double diff = v - static_cast<double>(t[c]);
            acc[c] += diff * diff;
        }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < count_; ++c) {
        if (acc[c] < acc[best]) {
            best = c;
        }
    }
    if (distance != nullptr) {
        *distance = count_ == 0 ? std::numeric_limits<double>::infinity() : acc[best];
    }
    return best;
}

KMeansResult kmeans(std::span<const float> data, std::size_t dim, std::size_t k,
                    int iterations, std::uint64_t seed) {
    if (dim == 0 || k == 0) {
        throw Error(ErrorKind::ConfigError, "k-means needs dim >= 1 and k >= 1");
    }
    if (iterations < 1) {
        throw Error(ErrorKind::ConfigError, "k-means needs at least one iteration");
    }
    const std::size_t n = data.size() / dim;
    if (n < k) {
        throw Error(ErrorKind::InsufficientData,
                    std::to_string(n) + " points for " + std::to_string(k) + " centroids");
    }

    KMeansResult result;
    result.centroids.resize(k * dim);
    result.assignment.assign(n, 0);

    // Partial Fisher-Yates: the first k slots become k distinct sampled points.
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(order[i] * dim), dim,
                    result.centroids.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }

    std::vector<double> point_dist(n, 0.0);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        double objective = 0.0;
        const CentroidScanner scanner(result.centroids, dim);
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            const auto c = static_cast<std::uint32_t>(scanner.nearest(data.subspan(i * dim, dim), &d));
            changed = changed || c != result.assignment[i];
            result.assignment[i] = c;
            point_dist[i] = d;
            objective += d;
        }
        result.objective.push_back(objective);
        if (it > 0 && !changed) {
            break;
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = result.assignment[i];
            ++counts[c];
            for (std::size_t j = 0; j < dim; ++j) {
                sums[c * dim + j] += data[i * dim + j];
            }
        }

        std::vector<std::size_t> empty;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                empty.push_back(c);
                continue;
            }
            for (std::size_t j = 0; j < dim; ++j) {
                result.centroids[c * dim + j] =
                    static_cast<float>(sums[c * dim + j] / static_cast<double>(counts[c]));
            }
        }
        if (!empty.empty()) {
            std::vector<std::size_t> far(n);
            std::iota(far.begin(), far.end(), std::size_t{0});
            const std::size_t take = std::min(empty.size(), n);
            std::partial_sort(far.begin(), far.begin() + static_cast<std::ptrdiff_t>(take), far.end(),
                              [&](std::size_t a, std::size_t b) {
                                  return point_dist[a] != point_dist[b] ? point_dist[a] > point_dist[b] : a < b;
                              });
            for (std::size_t e = 0; e < take; ++e) {
                std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(far[e] * dim), dim,
                            result.centroids.begin() + static_cast<std::ptrdiff_t>(empty[e] * dim));
            }
        }
    }
    return result;
}

}  // namespace etree
