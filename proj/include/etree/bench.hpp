#pragma once

#include "etree/eforest.hpp"
#include "etree/quantizer.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace etree::bench {

/// Gaussian blobs around centers drawn uniformly from [0, 1)^d.
struct SyntheticSpec {
    std::size_t num_vectors = 0;
    std::size_t dim = 0;
    std::size_t cluster_count = 1;
    double cluster_stddev = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Each point picks a cluster uniformly at random, so ids of one cluster are scattered.
VectorSet gen_synthetic(const SyntheticSpec& spec);

/// The *Slots variants emit distances in the first tree's leaf order instead
/// of indexing the output by id.
enum class Method { Adc, ETree, EForest, ETreeSlots, EForestSlots };
std::string_view to_string(Method m) noexcept;
Method method_from_string(std::string_view name);

struct BenchOptions {
    std::vector<Method> methods{Method::Adc, Method::ETree, Method::EForest, Method::ETreeSlots,
                                Method::EForestSlots};
    std::size_t repetitions = 10;
    std::size_t forest_trees = 2;
    std::optional<ChunkOrder> order;  // original order when unset
    std::size_t threads = 1;          // > 1 adds a separately reported multi-worker timing
    double abs_tolerance = 1e-4;
    double rel_tolerance = 1e-5;
};

struct MethodResult {
    Method method = Method::Adc;
    double median_ms = 0.0;  // per full-dataset scan
    double min_ms = 0.0;
    double max_ms = 0.0;
    std::uint64_t lookups = 0;  // table lookups per scan
    std::size_t memory_bytes = 0;
    std::size_t aux_bytes = 0;  // slot maps held by the scanner, not part of memory_bytes
    std::optional<double> multi_worker_median_ms;
};

struct BenchReport {
    std::size_t num_vectors = 0;
    std::size_t num_layers = 0;
    std::size_t num_codewords = 0;
    std::size_t num_queries = 0;
    std::size_t repetitions = 0;
    std::size_t threads = 1;
    std::string dataset;
    std::string order;
    double build_tree_ms = 0.0;
    double build_forest_ms = 0.0;
    std::vector<MethodResult> methods;
    std::vector<TreeStats> etree_stats;
    std::vector<TreeStats> eforest_stats;
    std::vector<std::string> notes;

    const MethodResult* find(Method m) const noexcept;
    /// ADC median time divided by the method's median time.
    double speedup(Method m) const;
};

/// Checks every method against naive ADC on every query, then times full
/// scans (table construction excluded). Throws EquivalenceFailure before any
/// timing is taken if a method disagrees with ADC.
BenchReport bench_scan(const EncodedDataset& ds, const Codebook& codebook, const VectorSet& queries,
                       const BenchOptions& options, std::string dataset = "codes");

std::string format_text(const BenchReport& report);
/// One key=value pair per line.
std::string format_records(const BenchReport& report);

}  // namespace etree::bench
