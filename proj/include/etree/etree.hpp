#pragma once

// Encoding Tree: a prefix tree over sorted PQ codes, serialized depth-first into
// one flat byte buffer and scanned with a running per-depth partial distance.
//
// Record layout (little-endian):
//   internal: [chunk u8][depth << 1      ]                       2 bytes
//   leaf:     [chunk u8][(count << 1) | 1][postfix u8 x P][id u32 x count]
//
// A leaf's depth is implicit: it is one below the most recent internal record
// (or 0 before any). Siblings are emitted leaves first, then internal subtrees,
// each group in ascending chunk order, so a leaf is never followed by a
// shallower leaf and every backtrack lands on an internal record that carries
// its depth. Postfix length is layer_count - depth - 1. Groups of more than 127
// identical codes become consecutive leaf records with the same chunk/postfix.

#include "etree/quantizer.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace etree {

namespace layout {
inline constexpr std::uint8_t kLeafBit = 1;
inline constexpr std::size_t kHeaderBytes = 2;
inline constexpr std::size_t kIdBytes = 4;
inline constexpr std::size_t kMaxLeafIds = 127;
inline constexpr std::size_t kMaxLayers = 127;
}  // namespace layout

/// Permutation applied to the M chunk layers before sorting and tree building.
/// Layer l of the tree reads original subspace permutation[l].
class ChunkOrder {
public:
    enum class Mode { Original, Randomized };

    ChunkOrder() = default;
    static ChunkOrder original(std::size_t num_layers);
    static ChunkOrder randomized(std::size_t num_layers, std::uint64_t seed);
    /// Validates; mode is Original iff the permutation is the identity.
    static ChunkOrder from_permutation(std::vector<std::uint32_t> permutation);

    const std::vector<std::uint32_t>& permutation() const noexcept { return permutation_; }
    std::size_t size() const noexcept { return permutation_.size(); }
    Mode mode() const noexcept { return mode_; }
    std::uint64_t seed() const noexcept { return seed_; }
    bool is_identity() const noexcept;

    /// Throws ConfigError unless this is a permutation of 0..num_layers-1.
    void validate(std::size_t num_layers) const;

    bool operator==(const ChunkOrder& other) const { return permutation_ == other.permutation_; }

private:
    std::vector<std::uint32_t> permutation_;
    Mode mode_ = Mode::Original;
    std::uint64_t seed_ = 0;
};

/// Codes with chunks reordered by `order` restricted to permuted layers
/// [first, first + count); ids and record order are unchanged.
EncodedDataset project_chunks(const EncodedDataset& ds, const ChunkOrder& order,
                              std::size_t first, std::size_t count);

/// Stable lexicographic sort (LSD radix, one pass per chunk).
EncodedDataset sort_lexicographic(const EncodedDataset& ds);

/// Permute chunks by `order`, then sort; equal codes keep input order.
EncodedDataset sort_encodings(const EncodedDataset& ds, const ChunkOrder& order);

/// Where a tree sits in the global layer space; used by forests.
struct TreePlacement {
    ChunkOrder order;              // empty means identity over the tree's layers
    std::size_t layer_offset = 0;  // first permuted layer covered by this tree
    std::size_t total_layers = 0;  // global M; 0 means the tree covers all layers
};

struct TreeStats {
    std::size_t internal_nodes = 0;  // L1
    std::size_t leaf_nodes = 0;      // L2, counting chained leaf records
    std::size_t total_postfix = 0;   // bytes of postfix over all leaf records
    double avg_postfix = 0.0;        // P = total_postfix / L2
    std::size_t node_count = 0;      // N' = L1 + L2
    std::size_t memory_bytes = 0;    // actual buffer length
    std::size_t num_vectors = 0;

    /// 4N + 2(L1 + L2) + total_postfix
    std::size_t formula_bytes() const noexcept {
        return layout::kIdBytes * num_vectors + layout::kHeaderBytes * node_count + total_postfix;
    }
    /// Table lookups one traversal performs: L1 + L2 + total_postfix.
    std::size_t lookup_count() const noexcept { return internal_nodes + leaf_nodes + total_postfix; }

    bool operator==(const TreeStats&) const = default;
};

class ETreeBuffer {
public:
    ETreeBuffer() = default;

    /// Adopts serialized bytes after a full structural parse; throws CorruptBuffer.
    static ETreeBuffer from_bytes(std::vector<std::uint8_t> bytes, std::size_t num_vectors,
                                  std::size_t num_codewords, TreePlacement placement,
                                  std::size_t layer_count);

    std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }
    std::size_t size_bytes() const noexcept { return bytes_.size(); }
    std::size_t num_vectors() const noexcept { return num_vectors_; }
    std::size_t num_codewords() const noexcept { return num_codewords_; }
    std::size_t total_layers() const noexcept { return order_.size(); }
    std::size_t layer_offset() const noexcept { return layer_offset_; }
    std::size_t layer_count() const noexcept { return layer_count_; }
    const ChunkOrder& chunk_order() const noexcept { return order_; }

    /// One past the largest stored id; traversal output must have at least this many slots.
    std::size_t id_bound() const noexcept { return id_bound_; }

    /// Number of leaf records, counting each link of a chain.
    std::size_t leaf_records() const noexcept { return leaf_records_; }

    /// Byte offsets where traversal may start with an empty context: 0 and each
    /// depth-0 internal record. Independent ranges for parallel scans.
    const std::vector<std::size_t>& root_offsets() const noexcept { return root_offsets_; }

    bool operator==(const ETreeBuffer& other) const {
        return bytes_ == other.bytes_ && num_vectors_ == other.num_vectors_ &&
               num_codewords_ == other.num_codewords_ && order_ == other.order_ &&
               layer_offset_ == other.layer_offset_ && layer_count_ == other.layer_count_;
    }

private:
    friend ETreeBuffer construct(const EncodedDataset& sorted, TreePlacement placement);

    void finish_metadata();

    std::vector<std::uint8_t> bytes_;
    std::size_t num_vectors_ = 0;
    std::size_t num_codewords_ = 0;
    ChunkOrder order_;
    std::size_t layer_offset_ = 0;
    std::size_t layer_count_ = 0;
    std::size_t id_bound_ = 0;
    std::size_t leaf_records_ = 0;
    std::vector<std::size_t> root_offsets_;
};

/// Builds the tree from lexicographically sorted codes whose chunk count is the
/// tree's layer count. Throws EmptyDataset for N=0 and PreconditionViolation if
/// the input is not sorted.
ETreeBuffer construct(const EncodedDataset& sorted, TreePlacement placement = {});

/// One parsed record, as seen by the structural parser.
struct NodeRecord {
    std::size_t offset = 0;
    bool leaf = false;
    std::size_t depth = 0;
    Chunk chunk = 0;
    std::span<const std::uint8_t> postfix;
    std::span<const std::uint8_t> id_bytes;

    std::size_t id_count() const noexcept { return id_bytes.size() / layout::kIdBytes; }
    VectorId id(std::size_t j) const noexcept;
};

/// Full structural parse. Checks header ranges, depth transitions, sibling order,
/// chained-leaf rules and that no internal node has a lone leaf below it.
/// Throws CorruptBuffer with the failing byte offset.
void parse_records(std::span<const std::uint8_t> bytes, std::size_t layer_count, std::size_t num_codewords,
                   const std::function<void(const NodeRecord&)>& visit);

TreeStats stats(const ETreeBuffer& tree);

/// Leaves in buffer order, expanded to full codes in the tree's layer space.
EncodedDataset enumerate_leaves(const ETreeBuffer& tree);

/// Walks the parsed tree visiting siblings in ascending chunk order, which
/// yields the sorted input of construct: codes and ids in their original order.
EncodedDataset enumerate_lexicographic(const ETreeBuffer& tree);

/// Depth-first scan writing out[id] for every stored id. `table` is in original
/// subspace order; the tree's chunk order and layer offset select its rows.
void traverse_distances(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out);

/// Same, returning the number of table lookups performed.
std::uint64_t traverse_distances_counted(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out);

/// Writes out[j] for the j-th stored id in buffer order (see leaf_ids). Avoids
/// the scattered writes of traverse_distances.
void traverse_leaf_order(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out);

inline constexpr std::size_t kMaxForestAddends = 127;

/// Leaf-order scan that adds addends[t][maps[t][j]] to slot j, in order of t.
/// Map entries must index into the matching addend span.
void traverse_leaf_order_sum(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out,
                             std::span<const std::span<const float>> addends,
                             std::span<const std::span<const std::uint32_t>> maps);

/// Writes one distance per leaf record, in buffer order.
void traverse_leaf_records(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out);

/// Stored ids in buffer order.
std::vector<VectorId> leaf_ids(const ETreeBuffer& tree);

/// For each id below id_bound, the index of the leaf record holding it
/// (UINT32_MAX for ids the tree does not store).
std::vector<std::uint32_t> leaf_record_of(const ETreeBuffer& tree);

/// Splits the scan over independent root subtrees across `threads` workers.
void traverse_distances_parallel(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out,
                                 std::size_t threads);

}  // namespace etree
