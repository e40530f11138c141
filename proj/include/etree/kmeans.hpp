#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace etree {

struct KMeansResult {
    std::vector<float> centroids;          // k x dim
    std::vector<std::uint32_t> assignment; // one entry per point
    std::vector<double> objective;         // sum of squared distances after each assignment step
};

/// Lloyd's k-means. Initial centroids are k distinct points sampled with `seed`;
/// an empty cluster takes over the point currently farthest from its centroid.
/// Requires n >= k.
KMeansResult kmeans(std::span<const float> data, std::size_t dim, std::size_t k,
                    int iterations, std::uint64_t seed);

/// Index of the centroid closest to x (ties to the smaller index).
std::size_t nearest_centroid(std::span<const float> centroids, std::size_t dim,
                             std::span<const float> x, double* distance = nullptr);

/// Centroids transposed to dimension-major order so the scan over centroids
/// vectorizes. Same per-centroid summation order as nearest_centroid.
class CentroidScanner {
public:
    CentroidScanner() = default;
    CentroidScanner(std::span<const float> centroids, std::size_t dim);

    std::size_t size() const noexcept { return count_; }
    std::size_t nearest(std::span<const float> x, double* distance = nullptr) const;

private:
    std::size_t dim_ = 0;
    std::size_t count_ = 0;
    std::vector<float> transposed_;  // dim x count
};

double squared_distance(std::span<const float> a, std::span<const float> b) noexcept;

}  // namespace etree
