#include "etree/etree.hpp"

#include "etree/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <bitset>
#include <cstring>
#include <numeric>
#include <random>
#include <string>
#include <thread>

namespace etree {

static_assert(std::endian::native == std::endian::little, "tree buffers store ids little-endian");

namespace {

inline std::uint32_t load_u32(const std::uint8_t* p) noexcept {
    std::uint32_t v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store_u32(std::uint8_t* p, std::uint32_t v) noexcept { std::memcpy(p, &v, sizeof v); }

[[noreturn]] void corrupt(std::size_t offset, const std::string& what) {
    throw Error(ErrorKind::CorruptBuffer, what + " at byte " + std::to_string(offset));
}

}  // namespace

// ---------------------------------------------------------------------------
// ChunkOrder

ChunkOrder ChunkOrder::original(std::size_t num_layers) {
    ChunkOrder order;
    order.permutation_.resize(num_layers);
    std::iota(order.permutation_.begin(), order.permutation_.end(), 0U);
    return order;
}

ChunkOrder ChunkOrder::randomized(std::size_t num_layers, std::uint64_t seed) {
    ChunkOrder order = original(num_layers);
    std::mt19937_64 rng(seed);
    std::shuffle(order.permutation_.begin(), order.permutation_.end(), rng);
    order.mode_ = Mode::Randomized;
    order.seed_ = seed;
    return order;
}

ChunkOrder ChunkOrder::from_permutation(std::vector<std::uint32_t> permutation) {
    ChunkOrder order;
    order.permutation_ = std::move(permutation);
    order.validate(order.permutation_.size());
    order.mode_ = order.is_identity() ? Mode::Original : Mode::Randomized;
    return order;
}

bool ChunkOrder::is_identity() const noexcept {
    for (std::size_t i = 0; i < permutation_.size(); ++i) {
        if (permutation_[i] != i) {
            return false;
        }
    }
    return true;
}

void ChunkOrder::validate(std::size_t num_layers) const {
    if (permutation_.size() != num_layers) {
        throw Error(ErrorKind::ConfigError, "chunk order has " + std::to_string(permutation_.size()) +
                                                " entries, expected " + std::to_string(num_layers));
    }
    std::vector<bool> seen(num_layers, false);
    for (auto p : permutation_) {
        if (p >= num_layers || seen[p]) {
            throw Error(ErrorKind::ConfigError, "chunk order is not a permutation");
        }
        seen[p] = true;
    }
}

// ---------------------------------------------------------------------------
// Sorting

EncodedDataset project_chunks(const EncodedDataset& ds, const ChunkOrder& order, std::size_t first,
                              std::size_t count) {
    order.validate(ds.num_chunks());
    if (first + count > ds.num_chunks()) {
        throw Error(ErrorKind::ConfigError, "layer range exceeds M");
    }
    const std::size_t m_in = ds.num_chunks();
    std::vector<Chunk> codes(ds.size() * count);
    const auto& perm = order.permutation();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Chunk* src = ds.codes().data() + i * m_in;
        Chunk* dst = codes.data() + i * count;
        for (std::size_t j = 0; j < count; ++j) {
            dst[j] = src[perm[first + j]];
        }
    }
    EncodedDataset out(count, ds.num_codewords());
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.append(std::span<const Chunk>(codes.data() + i * count, count), ds.id(i));
    }
    return out;
}

EncodedDataset sort_lexicographic(const EncodedDataset& ds) {
    const std::size_t n = ds.size();
    const std::size_t m = ds.num_chunks();
    std::vector<std::uint32_t> idx(n);
    std::vector<std::uint32_t> tmp(n);
    std::iota(idx.begin(), idx.end(), 0U);
    const Chunk* codes = ds.codes().data();
    for (std::size_t pos = m; pos-- > 0;) {
        std::array<std::size_t, 257> bucket{};
        for (std::size_t i = 0; i < n; ++i) {
            ++bucket[codes[static_cast<std::size_t>(idx[i]) * m + pos] + 1U];
        }
        for (std::size_t b = 1; b < bucket.size(); ++b) {
            bucket[b] += bucket[b - 1];
        }
        for (std::size_t i = 0; i < n; ++i) {
            tmp[bucket[codes[static_cast<std::size_t>(idx[i]) * m + pos]]++] = idx[i];
        }
        idx.swap(tmp);
    }
    EncodedDataset out(m, ds.num_codewords());
    out.reserve(n);
    for (auto i : idx) {
        out.append(ds.code(i), ds.id(i));
    }
    return out;
}

EncodedDataset sort_encodings(const EncodedDataset& ds, const ChunkOrder& order) {
    return sort_lexicographic(project_chunks(ds, order, 0, ds.num_chunks()));
}

// ---------------------------------------------------------------------------
// Construction

namespace {

class TreeWriter {
public:
    TreeWriter(const EncodedDataset& sorted, std::vector<std::size_t> group_starts, std::vector<std::uint8_t>& out)
        : ds_(sorted), groups_(std::move(group_starts)), out_(out), layers_(sorted.num_chunks()) {}

    void emit_root() { emit(0, groups_.size() - 1, 0); }

    std::size_t id_bound() const noexcept { return id_bound_; }
    const std::vector<std::size_t>& root_offsets() const noexcept { return root_offsets_; }

private:
    Chunk chunk(std::size_t group, std::size_t depth) const { return ds_.code(groups_[group])[depth]; }

    // Distinct-code groups [lo, hi) share chunks [0, depth); emit their subtree level.
    void emit(std::size_t lo, std::size_t hi, std::size_t depth) {
        std::vector<std::pair<std::size_t, std::size_t>> runs;
        for (std::size_t a = lo; a < hi;) {
            std::size_t b = a + 1;
            while (b < hi && chunk(b, depth) == chunk(a, depth)) {
                ++b;
            }
            runs.emplace_back(a, b);
            a = b;
        }
        for (const auto& [a, b] : runs) {
            if (b - a == 1) {
                emit_leaf(a, depth);
            }
        }
        for (const auto& [a, b] : runs) {
            if (b - a > 1) {
                if (depth == 0) {
                    root_offsets_.push_back(out_.size());
                }
                out_.push_back(chunk(a, depth));
                out_.push_back(static_cast<std::uint8_t>(depth << 1));
                emit(a, b, depth + 1);
            }
        }
    }

    void emit_leaf(std::size_t group, std::size_t depth) {
        const std::size_t first = groups_[group];
        const std::size_t last = groups_[group + 1];
        const auto code = ds_.code(first);
        for (std::size_t i = first; i < last;) {
            const std::size_t count = std::min(layout::kMaxLeafIds, last - i);
            out_.push_back(code[depth]);
            out_.push_back(static_cast<std::uint8_t>((count << 1) | layout::kLeafBit));
            out_.insert(out_.end(), code.begin() + static_cast<std::ptrdiff_t>(depth + 1), code.end());
            const std::size_t at = out_.size();
            out_.resize(at + count * layout::kIdBytes);
            for (std::size_t j = 0; j < count; ++j) {
                const VectorId id = ds_.id(i + j);
                id_bound_ = std::max<std::size_t>(id_bound_, std::size_t{id} + 1);
                store_u32(out_.data() + at + j * layout::kIdBytes, id);
            }
            i += count;
        }
    }

    const EncodedDataset& ds_;
    std::vector<std::size_t> groups_;  // start index of each distinct code, plus N
    std::vector<std::uint8_t>& out_;
    std::size_t layers_;
    std::size_t id_bound_ = 0;
    std::vector<std::size_t> root_offsets_{0};
};

}  // namespace

ETreeBuffer construct(const EncodedDataset& sorted, TreePlacement placement) {
    const std::size_t n = sorted.size();
    const std::size_t layers = sorted.num_chunks();
    if (n == 0) {
        throw Error(ErrorKind::EmptyDataset, "cannot build a tree over zero codes");
    }
    if (layers == 0 || layers > layout::kMaxLayers) {
        throw Error(ErrorKind::ConfigError, "tree layer count must be in [1, 127], got " + std::to_string(layers));
    }
    const std::size_t total = placement.total_layers == 0 ? layers : placement.total_layers;
    ChunkOrder order = placement.order.size() == 0 ? ChunkOrder::original(total) : placement.order;
    order.validate(total);
    if (placement.layer_offset + layers > total) {
        throw Error(ErrorKind::ConfigError, "tree layers exceed the global layer count");
    }

    // One pass: longest common prefix with the previous distinct code.
    std::vector<std::size_t> groups{0};
    std::size_t internal_nodes = 0;
    std::size_t prev_lcp = 0;
    std::vector<std::size_t> lcps;
    lcps.reserve(n);
    for (std::size_t i = 1; i < n; ++i) {
        const auto a = sorted.code(i - 1);
        const auto b = sorted.code(i);
        std::size_t l = 0;
        while (l < layers && a[l] == b[l]) {
            ++l;
        }
        if (l == layers) {
            continue;
        }
        if (b[l] < a[l]) {
            throw Error(ErrorKind::PreconditionViolation,
                        "codes are not lexicographically sorted at record " + std::to_string(i));
        }
        groups.push_back(i);
        lcps.push_back(l);
        internal_nodes += l > prev_lcp ? l - prev_lcp : 0;
        prev_lcp = l;
    }
    groups.push_back(n);

    // Exact size: every distinct code's leaf depth is the larger of its two LCPs.
    std::size_t leaf_records = 0;
    std::size_t postfix = 0;
    const std::size_t distinct = groups.size() - 1;
    for (std::size_t g = 0; g < distinct; ++g) {
        const std::size_t left = g == 0 ? 0 : lcps[g - 1];
        const std::size_t right = g + 1 == distinct ? 0 : lcps[g];
        const std::size_t records = (groups[g + 1] - groups[g] + layout::kMaxLeafIds - 1) / layout::kMaxLeafIds;
        leaf_records += records;
        postfix += records * (layers - std::max(left, right) - 1);
    }
    const std::size_t expected =
        layout::kIdBytes * n + layout::kHeaderBytes * (internal_nodes + leaf_records) + postfix;

    ETreeBuffer tree;
    tree.bytes_.reserve(expected);
    TreeWriter writer(sorted, std::move(groups), tree.bytes_);
    writer.emit_root();
    if (tree.bytes_.size() != expected) {
        throw Error(ErrorKind::CorruptBuffer, "tree size " + std::to_string(tree.bytes_.size()) +
                                                  " differs from the node-count formula " + std::to_string(expected));
    }
    tree.num_vectors_ = n;
    tree.num_codewords_ = sorted.num_codewords();
    tree.order_ = std::move(order);
    tree.layer_offset_ = placement.layer_offset;
    tree.layer_count_ = layers;
    tree.id_bound_ = writer.id_bound();
    tree.leaf_records_ = leaf_records;
    tree.root_offsets_ = writer.root_offsets();
    if (tree.root_offsets_.size() > 1 && tree.root_offsets_[1] == 0) {
        tree.root_offsets_.erase(tree.root_offsets_.begin());
    }
    return tree;
}

// ---------------------------------------------------------------------------
// Parsing

VectorId NodeRecord::id(std::size_t j) const noexcept { return load_u32(id_bytes.data() + j * layout::kIdBytes); }

void parse_records(std::span<const std::uint8_t> bytes, std::size_t layer_count, std::size_t num_codewords,
                   const std::function<void(const NodeRecord&)>& visit) {
    if (layer_count == 0 || layer_count > layout::kMaxLayers) {
        throw Error(ErrorKind::ConfigError, "layer count must be in [1, 127]");
    }
    struct Frame {
        std::size_t offset = 0;
        std::size_t children = 0;
        int last_chunk = -1;  // last leaf chunk while in the leaf group, then last internal chunk
        std::bitset<kMaxCodewords> seen;
        bool has_internal = false;
        bool last_was_leaf = false;
        std::size_t last_leaf_ids = 0;
        std::span<const std::uint8_t> last_postfix;
    };
    std::vector<Frame> frames(1);  // frames[0] is the virtual root at depth -1

    auto close_top = [&](std::size_t at) {
        const Frame& f = frames.back();
        if (f.children == 0) {
            corrupt(f.offset, "internal node without children (closed at " + std::to_string(at) + ")");
        }
        if (f.children == 1 && !f.has_internal) {
            corrupt(f.offset, "internal node above a single leaf");
        }
        frames.pop_back();
    };

    std::size_t pos = 0;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < layout::kHeaderBytes) {
            corrupt(pos, "truncated header");
        }
        NodeRecord rec;
        rec.offset = pos;
        rec.chunk = bytes[pos];
        const std::uint8_t header = bytes[pos + 1];
        rec.leaf = (header & layout::kLeafBit) != 0;
        if (rec.chunk >= num_codewords) {
            corrupt(pos, "chunk " + std::to_string(rec.chunk) + " >= K");
        }
        if (rec.leaf) {
            const std::size_t count = header >> 1;
            if (count == 0) {
                corrupt(pos, "leaf without ids");
            }
            rec.depth = frames.size() - 1;
            const std::size_t plen = layer_count - rec.depth - 1;
            const std::size_t len = layout::kHeaderBytes + plen + count * layout::kIdBytes;
            if (bytes.size() - pos < len) {
                corrupt(pos, "truncated leaf");
            }
            rec.postfix = bytes.subspan(pos + layout::kHeaderBytes, plen);
            rec.id_bytes = bytes.subspan(pos + layout::kHeaderBytes + plen, count * layout::kIdBytes);
            for (auto c : rec.postfix) {
                if (c >= num_codewords) {
                    corrupt(pos, "postfix chunk >= K");
                }
            }
            Frame& parent = frames.back();
            const bool chained = parent.last_was_leaf && parent.last_chunk == rec.chunk &&
                                 parent.last_leaf_ids == layout::kMaxLeafIds &&
                                 std::equal(rec.postfix.begin(), rec.postfix.end(), parent.last_postfix.begin(),
                                            parent.last_postfix.end());
            if (!chained) {
                if (rec.chunk <= parent.last_chunk || parent.seen.test(rec.chunk)) {
                    corrupt(pos, "leaf siblings out of order");
                }
                parent.seen.set(rec.chunk);
                ++parent.children;
            }
            parent.last_chunk = rec.chunk;
            parent.last_was_leaf = true;
            parent.last_leaf_ids = count;
            parent.last_postfix = rec.postfix;
            pos += len;
        } else {
            rec.depth = header >> 1;
            const std::size_t child_depth = frames.size() - 1;
            if (rec.depth > child_depth) {
                corrupt(pos, "internal depth " + std::to_string(rec.depth) + " skips below depth " +
                                 std::to_string(child_depth));
            }
            if (rec.depth + 2 > layer_count) {
                corrupt(pos, "internal node on the last layer");
            }
            while (frames.size() - 1 > rec.depth) {
                close_top(pos);
            }
            Frame& parent = frames.back();
            const int floor = parent.has_internal ? parent.last_chunk : -1;
            if (rec.chunk <= floor || parent.seen.test(rec.chunk)) {
                corrupt(pos, "internal siblings out of order");
            }
            parent.seen.set(rec.chunk);
            ++parent.children;
            parent.last_chunk = rec.chunk;
            parent.has_internal = true;
            parent.last_was_leaf = false;
            Frame child;
            child.offset = pos;
            frames.push_back(child);
            pos += layout::kHeaderBytes;
        }
        visit(rec);
    }
    while (frames.size() > 1) {
        close_top(pos);
    }
}

ETreeBuffer ETreeBuffer::from_bytes(std::vector<std::uint8_t> bytes, std::size_t num_vectors,
                                    std::size_t num_codewords, TreePlacement placement, std::size_t layer_count) {
    if (num_codewords == 0 || num_codewords > kMaxCodewords) {
        throw Error(ErrorKind::ConfigError, "K must be in [1, 256]");
    }
    const std::size_t total = placement.total_layers == 0 ? layer_count : placement.total_layers;
    ChunkOrder order = placement.order.size() == 0 ? ChunkOrder::original(total) : placement.order;
    order.validate(total);
    if (placement.layer_offset + layer_count > total) {
        throw Error(ErrorKind::ConfigError, "tree layers exceed the global layer count");
    }

    ETreeBuffer tree;
    std::vector<VectorId> ids;
    ids.reserve(num_vectors);
    std::vector<std::size_t> roots{0};
    std::size_t leaf_records = 0;
    parse_records(bytes, layer_count, num_codewords, [&](const NodeRecord& rec) {
        leaf_records += rec.leaf ? 1 : 0;
        if (!rec.leaf && rec.depth == 0 && rec.offset != 0) {
            roots.push_back(rec.offset);
        }
        for (std::size_t j = 0; j < rec.id_count(); ++j) {
            ids.push_back(rec.id(j));
        }
    });
    if (ids.size() != num_vectors) {
        throw Error(ErrorKind::CorruptBuffer,
                    "buffer stores " + std::to_string(ids.size()) + " ids, header says " + std::to_string(num_vectors));
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw Error(ErrorKind::CorruptBuffer, "duplicate id in buffer");
    }
    tree.bytes_ = std::move(bytes);
    tree.num_vectors_ = num_vectors;
    tree.num_codewords_ = num_codewords;
    tree.order_ = std::move(order);
    tree.layer_offset_ = placement.layer_offset;
    tree.layer_count_ = layer_count;
    tree.id_bound_ = ids.empty() ? 0 : std::size_t{ids.back()} + 1;
    tree.leaf_records_ = leaf_records;
    tree.root_offsets_ = std::move(roots);
    return tree;
}

TreeStats stats(const ETreeBuffer& tree) {
    TreeStats s;
    s.num_vectors = tree.num_vectors();
    parse_records(tree.bytes(), tree.layer_count(), tree.num_codewords(), [&](const NodeRecord& rec) {
        if (rec.leaf) {
            ++s.leaf_nodes;
            s.total_postfix += rec.postfix.size();
        } else {
            ++s.internal_nodes;
        }
    });
    s.node_count = s.internal_nodes + s.leaf_nodes;
    s.avg_postfix = s.leaf_nodes == 0 ? 0.0 : static_cast<double>(s.total_postfix) / static_cast<double>(s.leaf_nodes);
    s.memory_bytes = tree.size_bytes();
    return s;
}

EncodedDataset enumerate_leaves(const ETreeBuffer& tree) {
    const std::size_t layers = tree.layer_count();
    EncodedDataset out(layers, tree.num_codewords());
    out.reserve(tree.num_vectors());
    std::vector<Chunk> path(layers);
    parse_records(tree.bytes(), layers, tree.num_codewords(), [&](const NodeRecord& rec) {
        path[rec.depth] = rec.chunk;
        if (!rec.leaf) {
            return;
        }
        std::copy(rec.postfix.begin(), rec.postfix.end(), path.begin() + static_cast<std::ptrdiff_t>(rec.depth + 1));
        for (std::size_t j = 0; j < rec.id_count(); ++j) {
            out.append(path, rec.id(j));
        }
    });
    return out;
}

EncodedDataset enumerate_lexicographic(const ETreeBuffer& tree) {
    struct Node {
        const NodeRecord rec;
        std::vector<std::size_t> children;
    };
    const std::size_t layers = tree.layer_count();
    std::vector<Node> nodes;
    std::vector<std::size_t> roots;
    std::vector<std::size_t> open(layers);  // internal node index per depth on the current path
    parse_records(tree.bytes(), layers, tree.num_codewords(), [&](const NodeRecord& rec) {
        const std::size_t index = nodes.size();
        nodes.push_back({rec, {}});
        (rec.depth == 0 ? roots : nodes[open[rec.depth - 1]].children).push_back(index);
        if (!rec.leaf) {
            open[rec.depth] = index;
        }
    });
    auto by_chunk = [&](std::vector<std::size_t>& v) {
        std::stable_sort(v.begin(), v.end(),
                         [&](std::size_t a, std::size_t b) { return nodes[a].rec.chunk < nodes[b].rec.chunk; });
    };
    EncodedDataset out(layers, tree.num_codewords());
    out.reserve(tree.num_vectors());
    std::vector<Chunk> path(layers);
    std::vector<std::size_t> stack;
    by_chunk(roots);
    for (auto it = roots.rbegin(); it != roots.rend(); ++it) {
        stack.push_back(*it);
    }
    while (!stack.empty()) {
        const std::size_t index = stack.back();
        stack.pop_back();
        auto& node = nodes[index];
        path[node.rec.depth] = node.rec.chunk;
        if (node.rec.leaf) {
            std::copy(node.rec.postfix.begin(), node.rec.postfix.end(),
                      path.begin() + static_cast<std::ptrdiff_t>(node.rec.depth + 1));
            for (std::size_t j = 0; j < node.rec.id_count(); ++j) {
                out.append(path, node.rec.id(j));
            }
            continue;
        }
        by_chunk(node.children);
        for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) {
            stack.push_back(*it);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Traversal

namespace {

struct TableRows {
    std::array<const float*, layout::kMaxLayers> rows{};
};

TableRows select_rows(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out,
                      std::size_t needed) {
    if (table.num_subspaces() != tree.total_layers() || table.num_codewords() != tree.num_codewords()) {
        throw Error(ErrorKind::ConfigError, "table (M=" + std::to_string(table.num_subspaces()) +
                                                ", K=" + std::to_string(table.num_codewords()) +
                                                ") does not match tree (M=" + std::to_string(tree.total_layers()) +
                                                ", K=" + std::to_string(tree.num_codewords()) + ")");
    }
    if (out.size() < needed) {
        throw Error(ErrorKind::ConfigError, "output has " + std::to_string(out.size()) + " slots, " +
                                                std::to_string(needed) + " needed");
    }
    TableRows r;
    const auto& perm = tree.chunk_order().permutation();
    for (std::size_t l = 0; l < tree.layer_count(); ++l) {
        r.rows[l] = table.row(perm[tree.layer_offset() + l]).data();
    }
    return r;
}

// Ids are scattered across the output, so each write is delayed by a short
// ring while its cache line is prefetched.
class PendingWrites {
public:
    void push(VectorId id, float value, float* out) noexcept {
        __builtin_prefetch(out + id, 1);
        Slot& slot = ring_[head_ & kMask];
        if (head_ >= kSize) {
            out[slot.id] = slot.value;
        }
        slot = {id, value};
        ++head_;
    }

    void drain(float* out) noexcept {
        const std::size_t first = head_ > kSize ? head_ - kSize : 0;
        for (std::size_t i = first; i < head_; ++i) {
            const Slot& slot = ring_[i & kMask];
            out[slot.id] = slot.value;
        }
        head_ = 0;
    }

private:
    static constexpr std::size_t kSize = 16;
    static constexpr std::size_t kMask = kSize - 1;
    struct Slot {
        VectorId id;
        float value;
    };
    std::array<Slot, kSize> ring_{};
    std::size_t head_ = 0;
};

// Writes out[id] for every stored id.
struct ScatterSink {
    float* out;
    PendingWrites pending;

    void leaf(float value, const std::uint8_t* ids, std::size_t count) noexcept {
        for (std::size_t j = 0; j < count; ++j) {
            pending.push(load_u32(ids + j * layout::kIdBytes), value, out);
        }
    }
    void finish() noexcept { pending.drain(out); }
};

// Writes one slot per stored id in buffer order.
struct SlotSink {
    float* out;

    void leaf(float value, const std::uint8_t*, std::size_t count) noexcept {
        for (std::size_t j = 0; j < count; ++j) {
            out[j] = value;
        }
        out += count;
    }
    void finish() noexcept {}
};

// Slot sink that adds, per slot j, addends[t][maps[t][j]] for each extra tree.
struct SumSlotSink {
    float* out;
    const float* const* addends;
    const std::uint32_t* const* maps;
    std::size_t extra;
    std::size_t slot = 0;

    void leaf(float value, const std::uint8_t*, std::size_t count) noexcept {
        for (std::size_t j = 0; j < count; ++j, ++slot) {
            float sum = value;
            for (std::size_t t = 0; t < extra; ++t) {
                sum += addends[t][maps[t][slot]];
            }
            out[slot] = sum;
        }
    }
    void finish() noexcept {}
};

// Writes one value per leaf record.
struct RecordSink {
    float* out;

    void leaf(float value, const std::uint8_t*, std::size_t) noexcept { *out++ = value; }
    void finish() noexcept {}
};

// Distance context: context[l + 1] holds the partial sum over layers 0..l of
// the current path; context[0] is the empty prefix. A leaf at depth d starts
// from context[d].
// Layers = 0 reads the layer count at run time; fixed counts let the postfix
// loop unroll.
template <std::size_t Layers, bool Count, class Sink>
std::uint64_t scan(const std::uint8_t* p, const std::uint8_t* end, const float* const* rows,
                   std::size_t runtime_layers, Sink& sink) noexcept {
    const std::size_t layers = Layers == 0 ? runtime_layers : Layers;
    std::array<double, (Layers == 0 ? layout::kMaxLayers : Layers) + 1> context{};
    std::size_t depth = 0;
    std::uint64_t lookups = 0;
    while (p < end) {
        const Chunk chunk = p[0];
        const std::uint8_t header = p[1];
        if ((header & layout::kLeafBit) != 0) {
            const std::size_t postfix = layers - depth - 1;
            const std::uint8_t* q = p + layout::kHeaderBytes;
            double dist = context[depth] + rows[depth][chunk];
            for (std::size_t j = 0; j < postfix; ++j) {
                dist += rows[depth + 1 + j][q[j]];
            }
            q += postfix;
            const std::size_t count = header >> 1;
            sink.leaf(static_cast<float>(dist), q, count);
            p = q + count * layout::kIdBytes;
            if constexpr (Count) {
                lookups += 1 + postfix;
            }
        } else {
            const std::size_t level = header >> 1;
            context[level + 1] = context[level] + rows[level][chunk];
            depth = level + 1;
            p += layout::kHeaderBytes;
            if constexpr (Count) {
                ++lookups;
            }
        }
    }
    sink.finish();
    return lookups;
}

// Calls visit(record_index, id_bytes, count) for each leaf record in buffer order.
template <class Visit>
void walk_leaves(const ETreeBuffer& tree, Visit&& visit) {
    const auto bytes = tree.bytes();
    const std::uint8_t* p = bytes.data();
    const std::uint8_t* end = p + bytes.size();
    std::size_t depth = 0;
    std::size_t index = 0;
    while (p < end) {
        const std::uint8_t header = p[1];
        if ((header & layout::kLeafBit) != 0) {
            const std::uint8_t* q = p + layout::kHeaderBytes + (tree.layer_count() - depth - 1);
            const std::size_t count = header >> 1;
            visit(index++, q, count);
            p = q + count * layout::kIdBytes;
        } else {
            depth = (header >> 1) + 1;
            p += layout::kHeaderBytes;
        }
    }
}

template <bool Count, class Sink>
std::uint64_t scan_range(const std::uint8_t* p, const std::uint8_t* end, const float* const* rows,
                         std::size_t layers, Sink& sink) noexcept {
    switch (layers) {
        case 4: return scan<4, Count>(p, end, rows, layers, sink);
        case 8: return scan<8, Count>(p, end, rows, layers, sink);
        case 16: return scan<16, Count>(p, end, rows, layers, sink);
        default: return scan<0, Count>(p, end, rows, layers, sink);
    }
}

template <bool Count, class Sink>
std::uint64_t scan_all(const ETreeBuffer& tree, const TableRows& r, Sink& sink) noexcept {
    const auto bytes = tree.bytes();
    return scan_range<Count>(bytes.data(), bytes.data() + bytes.size(), r.rows.data(), tree.layer_count(), sink);
}

}  // namespace

void traverse_distances(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out) {
    const auto r = select_rows(tree, table, out, tree.id_bound());
    ScatterSink sink{out.data(), {}};
    scan_all<false>(tree, r, sink);
}

std::uint64_t traverse_distances_counted(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out) {
    const auto r = select_rows(tree, table, out, tree.id_bound());
    ScatterSink sink{out.data(), {}};
    return scan_all<true>(tree, r, sink);
}

void traverse_leaf_order(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out) {
    const auto r = select_rows(tree, table, out, tree.num_vectors());
    SlotSink sink{out.data()};
    scan_all<false>(tree, r, sink);
}

void traverse_leaf_order_sum(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out,
                             std::span<const std::span<const float>> addends,
                             std::span<const std::span<const std::uint32_t>> maps) {
    const auto r = select_rows(tree, table, out, tree.num_vectors());
    if (addends.size() != maps.size() || addends.size() > kMaxForestAddends) {
        throw Error(ErrorKind::ConfigError, "addend and map counts differ or exceed the limit");
    }
    std::array<const float*, kMaxForestAddends> add{};
    std::array<const std::uint32_t*, kMaxForestAddends> map{};
    for (std::size_t t = 0; t < maps.size(); ++t) {
        if (maps[t].size() < tree.num_vectors()) {
            throw Error(ErrorKind::ConfigError, "slot map shorter than the tree");
        }
        add[t] = addends[t].data();
        map[t] = maps[t].data();
    }
    SumSlotSink sink{out.data(), add.data(), map.data(), maps.size()};
    scan_all<false>(tree, r, sink);
}

void traverse_leaf_records(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out) {
    const auto r = select_rows(tree, table, out, tree.leaf_records());
    RecordSink sink{out.data()};
    scan_all<false>(tree, r, sink);
}

std::vector<VectorId> leaf_ids(const ETreeBuffer& tree) {
    std::vector<VectorId> ids;
    ids.reserve(tree.num_vectors());
    walk_leaves(tree, [&](std::size_t, const std::uint8_t* p, std::size_t count) {
        for (std::size_t j = 0; j < count; ++j) {
            ids.push_back(load_u32(p + j * layout::kIdBytes));
        }
    });
    return ids;
}

std::vector<std::uint32_t> leaf_record_of(const ETreeBuffer& tree) {
    std::vector<std::uint32_t> record(tree.id_bound(), std::numeric_limits<std::uint32_t>::max());
    walk_leaves(tree, [&](std::size_t index, const std::uint8_t* p, std::size_t count) {
        for (std::size_t j = 0; j < count; ++j) {
            record[load_u32(p + j * layout::kIdBytes)] = static_cast<std::uint32_t>(index);
        }
    });
    return record;
}

void traverse_distances_parallel(const ETreeBuffer& tree, const DistanceTable& table, std::span<float> out,
                                 std::size_t threads) {
    const auto r = select_rows(tree, table, out, tree.id_bound());
    const auto bytes = tree.bytes();
    const auto& roots = tree.root_offsets();
    threads = std::clamp<std::size_t>(threads, 1, roots.size());
    if (threads == 1) {
        ScatterSink sink{out.data(), {}};
        scan_all<false>(tree, r, sink);
        return;
    }
    // Cut at root subtree boundaries so each worker gets about the same number of bytes.
    std::vector<std::size_t> cuts{0};
    for (std::size_t t = 1; t < threads; ++t) {
        const std::size_t target = bytes.size() * t / threads;
        const auto it = std::lower_bound(roots.begin(), roots.end(), target);
        if (it != roots.end() && *it > cuts.back()) {
            cuts.push_back(*it);
        }
    }
    cuts.push_back(bytes.size());
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w + 1 < cuts.size(); ++w) {
        workers.emplace_back([&, w] {
            ScatterSink sink{out.data(), {}};
            scan_range<false>(bytes.data() + cuts[w], bytes.data() + cuts[w + 1], r.rows.data(), tree.layer_count(),
                              sink);
        });
    }
}

}  // namespace etree
