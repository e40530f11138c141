#pragma once

// IVFADC: a coarse k-means quantizer routes each vector to one inverted list;
// the residual to its list centroid is PQ-encoded with one shared codebook.
// Each list keeps its codes plus an E-Tree (or forest) over them, so the
// per-list scan can run either as naive ADC or as a tree traversal.

#include "etree/eforest.hpp"
#include "etree/quantizer.hpp"
#include "etree/topk.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace etree::ivf {

struct IvfParams {
    std::size_t coarse_centroids = 256;  // K'
    std::size_t num_subspaces = 8;       // M
    std::size_t num_codewords = 256;     // K
    int iterations = 20;
    std::uint64_t seed = 0;
    std::size_t trees_per_list = 1;
    /// Both k-means stages train on at most this many sampled points; 0 uses all.
    std::size_t max_training_points = 65536;
};

struct CoarseQuantizer {
    VectorSet centroids;

    std::size_t size() const noexcept { return centroids.size(); }
    /// The w closest centroids, ascending by distance then index.
    std::vector<std::size_t> nearest(std::span<const float> q, std::size_t w) const;
};

struct InvertedList {
    std::vector<VectorId> ids;  // global ids; tree and code ids are positions in this vector
    EncodedDataset codes;       // residual codes in insertion order
    EForest forest;             // empty when the list is empty
};

struct InvertedIndex {
    CoarseQuantizer coarse;
    Codebook codebook;  // residual space, shared by all lists
    std::vector<InvertedList> lists;
    std::size_t num_vectors = 0;
    std::size_t trees_per_list = 1;

    std::size_t dim() const noexcept { return codebook.dim(); }
};

InvertedIndex build_ivf(const VectorSet& data, const IvfParams& params);

enum class ScanMethod { Tree, Adc };

/// Wall time per search phase, in milliseconds.
struct SearchTiming {
    double coarse_ms = 0.0;
    double table_ms = 0.0;
    double traversal_ms = 0.0;
    double merge_ms = 0.0;

    double total_ms() const noexcept { return coarse_ms + table_ms + traversal_ms + merge_ms; }
    SearchTiming& operator+=(const SearchTiming& o) noexcept;
};

using QueryResult = std::vector<Neighbor>;

/// Probes the w nearest lists. Throws ConfigError unless 1 <= w <= K'.
QueryResult ivf_search(const InvertedIndex& index, std::span<const float> query, std::size_t w, std::size_t k,
                       ScanMethod method = ScanMethod::Tree, SearchTiming* timing = nullptr);

/// Residual ADC over every list, independent of probing.
QueryResult exhaustive_residual_search(const InvertedIndex& index, std::span<const float> query, std::size_t k);

/// Exact squared-L2 nearest neighbours, for ground truth.
std::vector<std::vector<std::int32_t>> brute_force_neighbors(const VectorSet& data, const VectorSet& queries,
                                                             std::size_t k);

/// Fraction of queries whose true nearest neighbour (truth[q][0]) is among the top r results.
double recall_at(const std::vector<QueryResult>& results, const std::vector<std::vector<std::int32_t>>& truth,
                 std::size_t r);

/// Directory layout: meta.json, coarse.fvecs, codebook.etcb, lists.ivecs,
/// codes.etcd (list order, global ids) and lists.etre (one container per list).
void save_index(const std::filesystem::path& dir, const InvertedIndex& index);
InvertedIndex load_index(const std::filesystem::path& dir);

}  // namespace etree::ivf
