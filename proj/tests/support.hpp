#pragma once

// Shared generators and naive oracles for the test binaries.

#include "etree/etree.hpp"
#include "etree/quantizer.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <vector>

namespace etree::testing {

inline EncodedDataset random_codes(std::size_t n, std::size_t m, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> chunk(0, static_cast<int>(k) - 1);
    std::vector<Chunk> codes(n * m);
    for (auto& c : codes) {
        c = static_cast<Chunk>(chunk(rng));
    }
    std::vector<VectorId> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = static_cast<VectorId>(i);
    }
    return EncodedDataset(m, k, std::move(codes), std::move(ids));
}

// Codes drawn from a small pool of prototypes with a few chunks redrawn, so
// prefixes are shared and duplicates are common. Ids are a shuffled range.
inline EncodedDataset clustered_codes(std::size_t n, std::size_t m, std::size_t k, std::size_t prototypes,
                                      double mutate, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> chunk(0, static_cast<int>(k) - 1);
    std::uniform_int_distribution<std::size_t> pick(0, prototypes - 1);
    std::bernoulli_distribution flip(mutate);
    std::vector<Chunk> protos(prototypes * m);
    for (auto& c : protos) {
        c = static_cast<Chunk>(chunk(rng));
    }
    std::vector<Chunk> codes(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = pick(rng);
        for (std::size_t j = 0; j < m; ++j) {
            codes[i * m + j] = flip(rng) ? static_cast<Chunk>(chunk(rng)) : protos[p * m + j];
        }
    }
    std::vector<VectorId> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = static_cast<VectorId>(i * 3 + 1);
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    return EncodedDataset(m, k, std::move(codes), std::move(ids));
}

inline DistanceTable random_table(std::size_t m, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0F, 1.0F);
    std::vector<float> e(m * k);
    for (auto& x : e) {
        x = u(rng);
    }
    return DistanceTable(m, k, std::move(e));
}

inline VectorSet random_vectors(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0F, 1.0F);
    std::vector<float> v(n * d);
    for (auto& x : v) {
        x = u(rng);
    }
    return VectorSet(d, std::move(v));
}

// Reference sort: std::stable_sort on (code, input position) tuples.
inline EncodedDataset reference_sort(const EncodedDataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto ca = ds.code(a);
        const auto cb = ds.code(b);
        return std::lexicographical_compare(ca.begin(), ca.end(), cb.begin(), cb.end());
    });
    EncodedDataset out(ds.num_chunks(), ds.num_codewords());
    for (auto i : idx) {
        out.append(ds.code(i), ds.id(i));
    }
    return out;
}

// Pointer-based trie with one node per (prefix, chunk), then path compression:
// a node whose subtree holds a single distinct code becomes a leaf.
struct TrieOracle {
    struct Node {
        std::map<Chunk, std::unique_ptr<Node>> children;
        std::size_t distinct = 0;  // distinct full codes below
        std::size_t count = 0;     // ids below
    };

    std::size_t layers = 0;
    Node root;
    std::size_t internal = 0;
    std::size_t leaves = 0;
    std::size_t postfix = 0;
    std::size_t ids = 0;

    explicit TrieOracle(const EncodedDataset& ds) : layers(ds.num_chunks()) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            insert(ds.code(i));
        }
        count(root, -1);
    }

    std::size_t bytes() const { return 4 * ids + 2 * (internal + leaves) + postfix; }

private:
    void insert(std::span<const Chunk> code) {
        Node* node = &root;
        std::vector<Node*> path{node};
        bool fresh = false;
        for (Chunk c : code) {
            auto& child = node->children[c];
            if (!child) {
                child = std::make_unique<Node>();
                fresh = true;
            }
            node = child.get();
            path.push_back(node);
        }
        for (Node* p : path) {
            ++p->count;
            p->distinct += fresh ? 1 : 0;
        }
        ++ids;
    }

    void count(const Node& node, int depth) {
        for (const auto& [chunk, child] : node.children) {
            const int d = depth + 1;
            if (child->distinct == 1) {
                leaves += (child->count + 126) / 127;
                postfix += ((child->count + 126) / 127) * (layers - static_cast<std::size_t>(d) - 1);
            } else {
                ++internal;
                count(*child, d);
            }
        }
    }
};

inline std::vector<float> naive_adc(const DistanceTable& table, const EncodedDataset& ds) {
    std::vector<float> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double s = 0.0;
        const auto c = ds.code(i);
        for (std::size_t m = 0; m < c.size(); ++m) {
            s += table.at(m, c[m]);
        }
        out[i] = static_cast<float>(s);
    }
    return out;
}

}  // namespace etree::testing
