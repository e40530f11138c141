#include "etree/eforest.hpp"

#include "etree/error.hpp"

#include <algorithm>
#include <string>

namespace etree {

ForestConfig ForestConfig::even(std::size_t num_layers, std::size_t num_trees) {
    if (num_trees == 0 || num_trees > num_layers) {
        throw Error(ErrorKind::ConfigError, "cannot split " + std::to_string(num_layers) + " layers into " +
                                                std::to_string(num_trees) + " trees");
    }
    ForestConfig cfg;
    std::size_t offset = 0;
    for (std::size_t t = 0; t < num_trees; ++t) {
        const std::size_t count = num_layers / num_trees + (t < num_layers % num_trees ? 1 : 0);
        cfg.splits.push_back({offset, count});
        offset += count;
    }
    return cfg;
}

void ForestConfig::validate(std::size_t num_layers) const {
    if (splits.empty()) {
        throw Error(ErrorKind::ConfigError, "forest needs at least one tree");
    }
    std::size_t expect = 0;
    for (const auto& r : splits) {
        if (r.count == 0 || r.offset != expect) {
            throw Error(ErrorKind::ConfigError, "layer ranges must be non-empty and contiguous");
        }
        expect += r.count;
    }
    if (expect != num_layers) {
        throw Error(ErrorKind::ConfigError,
                    "layer ranges cover " + std::to_string(expect) + " of " + std::to_string(num_layers) + " layers");
    }
}

bool ForestConfig::has_short_ranges() const noexcept {
    return std::any_of(splits.begin(), splits.end(), [](const LayerRange& r) { return r.count < 4; });
}

EForest::EForest(std::vector<ETreeBuffer> trees, std::size_t num_vectors, std::size_t num_codewords, ChunkOrder order)
    : trees_(std::move(trees)), num_vectors_(num_vectors), num_codewords_(num_codewords), order_(std::move(order)) {
    order_.validate(order_.size());
    std::size_t expect = 0;
    for (const auto& t : trees_) {
        if (t.layer_offset() != expect || t.num_vectors() != num_vectors_ || t.num_codewords() != num_codewords_ ||
            !(t.chunk_order() == order_)) {
            throw Error(ErrorKind::ConfigError, "trees do not form a consistent forest");
        }
        expect += t.layer_count();
    }
    if (!trees_.empty() && expect != order_.size()) {
        throw Error(ErrorKind::ConfigError, "forest trees do not cover every layer");
    }
}

std::size_t EForest::id_bound() const noexcept {
    std::size_t bound = 0;
    for (const auto& t : trees_) {
        bound = std::max(bound, t.id_bound());
    }
    return bound;
}

std::size_t EForest::memory_bytes() const noexcept {
    std::size_t total = 0;
    for (const auto& t : trees_) {
        total += t.size_bytes();
    }
    return total;
}

std::vector<TreeStats> EForest::tree_stats() const {
    std::vector<TreeStats> out;
    out.reserve(trees_.size());
    for (const auto& t : trees_) {
        out.push_back(stats(t));
    }
    return out;
}

EForest build_forest(const EncodedDataset& ds, const ChunkOrder& order, const ForestConfig& config) {
    const std::size_t m = ds.num_chunks();
    order.validate(m);
    config.validate(m);
    std::vector<ETreeBuffer> trees;
    trees.reserve(config.num_trees());
    for (const auto& r : config.splits) {
        const auto sorted = sort_lexicographic(project_chunks(ds, order, r.offset, r.count));
        trees.push_back(construct(sorted, TreePlacement{order, r.offset, m}));
    }
    return EForest(std::move(trees), ds.size(), ds.num_codewords(), order);
}

ForestScanner::ForestScanner(const EForest& forest) : forest_(&forest) {
    if (forest.num_trees() > 1) {
        partial_.resize(forest.id_bound());
    }
}

template <bool Count>
std::uint64_t ForestScanner::run(const DistanceTable& table, std::span<float> out) {
    const auto& trees = forest_->trees();
    if (trees.empty()) {
        return 0;
    }
    std::uint64_t lookups = 0;
    auto traverse = [&](const ETreeBuffer& t, std::span<float> dst) {
        if constexpr (Count) {
            lookups += traverse_distances_counted(t, table, dst);
        } else {
            traverse_distances(t, table, dst);
        }
    };
    traverse(trees[0], out);
    const std::size_t n = partial_.size();
    if (out.size() < n) {
        throw Error(ErrorKind::ConfigError, "output smaller than the forest id range");
    }
    for (std::size_t t = 1; t < trees.size(); ++t) {
        traverse(trees[t], partial_);
        float* dst = out.data();
        const float* src = partial_.data();
        for (std::size_t i = 0; i < n; ++i) {
            dst[i] += src[i];
        }
    }
    return lookups;
}

void ForestScanner::distances(const DistanceTable& table, std::span<float> out) { run<false>(table, out); }

std::uint64_t ForestScanner::distances_counted(const DistanceTable& table, std::span<float> out) {
    return run<true>(table, out);
}

void ForestScanner::prepare_slots() {
    const auto& trees = forest_->trees();
    if (trees.empty() || !slot_ids_.empty()) {
        return;
    }
    slot_ids_ = leaf_ids(trees[0]);
    for (std::size_t t = 1; t < trees.size(); ++t) {
        const auto record = leaf_record_of(trees[t]);
        std::vector<std::uint32_t> map(slot_ids_.size());
        for (std::size_t j = 0; j < slot_ids_.size(); ++j) {
            map[j] = record[slot_ids_[j]];
        }
        slot_record_.push_back(std::move(map));
        record_dist_.emplace_back(trees[t].leaf_records());
    }
}

const std::vector<VectorId>& ForestScanner::slot_ids() {
    prepare_slots();
    return slot_ids_;
}

void ForestScanner::slot_distances(const DistanceTable& table, std::span<float> out) {
    const auto& trees = forest_->trees();
    if (trees.empty()) {
        return;
    }
    prepare_slots();
    std::vector<std::span<const float>> addends;
    std::vector<std::span<const std::uint32_t>> maps;
    for (std::size_t t = 1; t < trees.size(); ++t) {
        traverse_leaf_records(trees[t], table, record_dist_[t - 1]);
        addends.emplace_back(record_dist_[t - 1]);
        maps.emplace_back(slot_record_[t - 1]);
    }
    traverse_leaf_order_sum(trees[0], table, out, addends, maps);
}

std::size_t ForestScanner::slot_memory_bytes() const noexcept {
    std::size_t bytes = slot_ids_.size() * sizeof(VectorId);
    for (std::size_t t = 0; t < slot_record_.size(); ++t) {
        bytes += slot_record_[t].size() * sizeof(std::uint32_t) + record_dist_[t].size() * sizeof(float);
    }
    return bytes;
}

std::vector<float> forest_distances(const EForest& forest, const DistanceTable& table) {
    std::vector<float> out(forest.id_bound());
    ForestScanner(forest).distances(table, out);
    return out;
}

}  // namespace etree
