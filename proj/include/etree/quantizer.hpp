#pragma once

#include "etree/kmeans.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace etree {

using Chunk = std::uint8_t;
using VectorId = std::uint32_t;

/// Codeword count is capped so every chunk fits in one byte of the tree layout.
inline constexpr std::size_t kMaxCodewords = 256;

/// Row-major set of equal-length float vectors.
class VectorSet {
public:
    VectorSet() = default;
    explicit VectorSet(std::size_t dim) : dim_(dim) {}
    VectorSet(std::size_t dim, std::vector<float> values);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return dim_ == 0 ? 0 : values_.size() / dim_; }
    bool empty() const noexcept { return size() == 0; }

    std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    std::span<float> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }

    const std::vector<float>& values() const noexcept { return values_; }

    void push_back(std::span<const float> v);
    void reserve(std::size_t n) { values_.reserve(n * dim_); }

    /// Throws InvalidVector if any coordinate is NaN or infinite.
    void check_finite() const;

private:
    std::size_t dim_ = 0;
    std::vector<float> values_;
};

/// M sub-codebooks of K codewords; centroids stored in (m, k, dim) order.
class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t dim, std::size_t num_subspaces, std::size_t num_codewords,
             std::vector<float> centroids);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_subspaces() const noexcept { return num_subspaces_; }
    std::size_t num_codewords() const noexcept { return num_codewords_; }
    std::size_t sub_dim() const noexcept { return num_subspaces_ == 0 ? 0 : dim_ / num_subspaces_; }

    std::span<const float> centroid(std::size_t m, std::size_t k) const {
        return {centroids_.data() + (m * num_codewords_ + k) * sub_dim(), sub_dim()};
    }
    /// All K codewords of subspace m, contiguous.
    std::span<const float> subspace(std::size_t m) const {
        return {centroids_.data() + m * num_codewords_ * sub_dim(), num_codewords_ * sub_dim()};
    }
    const std::vector<float>& centroids() const noexcept { return centroids_; }

    /// Nearest codeword of subspace m for one subvector.
    std::size_t nearest(std::size_t m, std::span<const float> subvector) const {
        return scanners_[m].nearest(subvector);
    }

    bool operator==(const Codebook& o) const {
        return dim_ == o.dim_ && num_subspaces_ == o.num_subspaces_ && num_codewords_ == o.num_codewords_ &&
               centroids_ == o.centroids_;
    }

private:
    std::size_t dim_ = 0;
    std::size_t num_subspaces_ = 0;
    std::size_t num_codewords_ = 0;
    std::vector<float> centroids_;
    std::vector<CentroidScanner> scanners_;
};

/// N codes of M one-byte chunks, each paired with a 32-bit vector id.
class EncodedDataset {
public:
    EncodedDataset() = default;
    EncodedDataset(std::size_t num_chunks, std::size_t num_codewords);
    /// Validates chunk range and id uniqueness.
    EncodedDataset(std::size_t num_chunks, std::size_t num_codewords,
                   std::vector<Chunk> codes, std::vector<VectorId> ids);

    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    std::size_t num_chunks() const noexcept { return num_chunks_; }
    std::size_t num_codewords() const noexcept { return num_codewords_; }

    std::span<const Chunk> code(std::size_t i) const { return {codes_.data() + i * num_chunks_, num_chunks_}; }
    VectorId id(std::size_t i) const { return ids_[i]; }

    const std::vector<Chunk>& codes() const noexcept { return codes_; }
    const std::vector<VectorId>& ids() const noexcept { return ids_; }

    void reserve(std::size_t n);
    /// Appends without the uniqueness check; call validate() when done.
    void append(std::span<const Chunk> code, VectorId id);
    void validate() const;

    bool operator==(const EncodedDataset&) const = default;

private:
    std::size_t num_chunks_ = 0;
    std::size_t num_codewords_ = 0;
    std::vector<Chunk> codes_;
    std::vector<VectorId> ids_;
};

/// Per-query M x K table of squared subvector distances, stored as M blocks of K entries.
class DistanceTable {
public:
    DistanceTable() = default;
    DistanceTable(std::size_t num_subspaces, std::size_t num_codewords)
        : num_subspaces_(num_subspaces), num_codewords_(num_codewords),
          entries_(num_subspaces * num_codewords, 0.0F) {}
    DistanceTable(std::size_t num_subspaces, std::size_t num_codewords, std::vector<float> entries);

    std::size_t num_subspaces() const noexcept { return num_subspaces_; }
    std::size_t num_codewords() const noexcept { return num_codewords_; }

    std::span<const float> row(std::size_t m) const { return {entries_.data() + m * num_codewords_, num_codewords_}; }
    std::span<float> row(std::size_t m) { return {entries_.data() + m * num_codewords_, num_codewords_}; }
    float at(std::size_t m, std::size_t k) const { return entries_[m * num_codewords_ + k]; }

    const std::vector<float>& entries() const noexcept { return entries_; }

private:
    std::size_t num_subspaces_ = 0;
    std::size_t num_codewords_ = 0;
    std::vector<float> entries_;
};

struct TrainOptions {
    std::size_t num_subspaces = 8;
    std::size_t num_codewords = 256;
    int iterations = 25;
    std::uint64_t seed = 0;
    /// Train on a seeded random subset of this many points; 0 uses everything.
    std::size_t max_points = 0;
};

/// k-means objective after each assignment step, one trace per subspace.
struct TrainReport {
    std::vector<std::vector<double>> objective;
};

Codebook train_pq(const VectorSet& data, const TrainOptions& options, TrainReport* report = nullptr);

/// Nearest codeword per subspace; ties go to the smaller index.
void encode(const Codebook& codebook, std::span<const float> v, std::span<Chunk> out);
std::vector<Chunk> encode(const Codebook& codebook, std::span<const float> v);
/// Encodes every row; ids are row positions 0..N-1.
EncodedDataset encode_all(const Codebook& codebook, const VectorSet& data);

std::vector<float> decode(const Codebook& codebook, std::span<const Chunk> code);

DistanceTable build_distance_table(const Codebook& codebook, std::span<const float> query);

/// Sum of M table lookups, accumulated in double in layer order.
float adc_distance(const DistanceTable& table, std::span<const Chunk> code);

/// Naive exhaustive ADC; out[i] is the distance of ds.code(i).
void adc_scan(const DistanceTable& table, const EncodedDataset& ds, std::span<float> out);
std::vector<float> adc_scan(const DistanceTable& table, const EncodedDataset& ds);

}  // namespace etree
