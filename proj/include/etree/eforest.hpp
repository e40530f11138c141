#pragma once

#include "etree/etree.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace etree {

struct LayerRange {
    std::size_t offset = 0;
    std::size_t count = 0;
    bool operator==(const LayerRange&) const = default;
};

/// Contiguous ranges over the permuted layer order, one per tree.
struct ForestConfig {
    std::vector<LayerRange> splits;

    /// T nearly equal ranges; the first M % T ranges get one extra layer.
    static ForestConfig even(std::size_t num_layers, std::size_t num_trees);

    /// Throws ConfigError unless the ranges are non-empty and tile [0, num_layers) in order.
    void validate(std::size_t num_layers) const;

    /// Trees shorter than four layers usually lose more to the extra summation than they save.
    bool has_short_ranges() const noexcept;

    std::size_t num_trees() const noexcept { return splits.size(); }
};

class EForest {
public:
    EForest() = default;
    /// Adopts trees loaded from disk; checks they tile the layer space consistently.
    EForest(std::vector<ETreeBuffer> trees, std::size_t num_vectors, std::size_t num_codewords, ChunkOrder order);

    const std::vector<ETreeBuffer>& trees() const noexcept { return trees_; }
    std::size_t num_trees() const noexcept { return trees_.size(); }
    std::size_t num_vectors() const noexcept { return num_vectors_; }
    std::size_t num_layers() const noexcept { return order_.size(); }
    std::size_t num_codewords() const noexcept { return num_codewords_; }
    const ChunkOrder& chunk_order() const noexcept { return order_; }
    std::size_t id_bound() const noexcept;

    /// Sum of tree buffer sizes; ids are repeated once per tree.
    std::size_t memory_bytes() const noexcept;
    std::vector<TreeStats> tree_stats() const;

private:
    std::vector<ETreeBuffer> trees_;
    std::size_t num_vectors_ = 0;
    std::size_t num_codewords_ = 0;
    ChunkOrder order_;
};

EForest build_forest(const EncodedDataset& ds, const ChunkOrder& order, const ForestConfig& config);

/// Reusable scan state: one dense partial array, allocated once per forest.
class ForestScanner {
public:
    explicit ForestScanner(const EForest& forest);

    /// out[id] = sum over trees of that tree's partial distance.
    void distances(const DistanceTable& table, std::span<float> out);
    /// As above, returning the total number of table lookups.
    std::uint64_t distances_counted(const DistanceTable& table, std::span<float> out);

    /// Slot order: the first tree's buffer order. out[j] is the distance of
    /// slot_ids()[j]. No scattered writes; costs 4 bytes per vector per extra
    /// tree for the slot-to-record maps, built on first use.
    void slot_distances(const DistanceTable& table, std::span<float> out);
    const std::vector<VectorId>& slot_ids();
    /// Bytes held for slot mode beyond the tree buffers.
    std::size_t slot_memory_bytes() const noexcept;

private:
    template <bool Count>
    std::uint64_t run(const DistanceTable& table, std::span<float> out);
    void prepare_slots();

    const EForest* forest_;
    std::vector<float> partial_;
    std::vector<VectorId> slot_ids_;
    std::vector<std::vector<std::uint32_t>> slot_record_;  // per extra tree
    std::vector<std::vector<float>> record_dist_;          // per extra tree
};

std::vector<float> forest_distances(const EForest& forest, const DistanceTable& table);

}  // namespace etree
