#include "support.hpp"

#include "etree/error.hpp"
#include "etree/etree.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace etree;
using namespace etree::testing;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an etree::Error");
    return ErrorKind::IoError;
}

EncodedDataset four_codes() {
    return EncodedDataset(4, 16, {1, 2, 3, 4, 1, 2, 3, 5, 1, 2, 7, 7, 9, 9, 9, 9}, {0, 1, 2, 3});
}

ETreeBuffer build(const EncodedDataset& ds) { return construct(sort_lexicographic(ds)); }

ETreeBuffer parse(std::vector<std::uint8_t> bytes, std::size_t n, std::size_t k, std::size_t layers) {
    return ETreeBuffer::from_bytes(std::move(bytes), n, k, {}, layers);
}

EncodedDataset stable_by_code(const EncodedDataset& ds) { return reference_sort(ds); }

}  // namespace

TEST_CASE("sort_encodings examples") {
    const auto sorted = four_codes();
    CHECK(sort_encodings(sorted, ChunkOrder::original(4)) == sorted);
    const EncodedDataset two(2, 4, {2, 1, 1, 2}, {0, 1});
    const auto s = sort_encodings(two, ChunkOrder::original(2));
    CHECK(s == EncodedDataset(2, 4, {1, 2, 2, 1}, {1, 0}));
}

TEST_CASE("sort_encodings matches a comparison sort of permuted codes") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng() % 12;
        const auto ds = clustered_codes(1000, m, trial % 2 ? 4 : 256, 30, 0.3, rng());
        const auto order = ChunkOrder::randomized(m, rng());
        const auto projected = project_chunks(ds, order, 0, m);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            for (std::size_t l = 0; l < m; ++l) {
                REQUIRE(projected.code(i)[l] == ds.code(i)[order.permutation()[l]]);
            }
        }
        CHECK(sort_encodings(ds, order) == reference_sort(projected));
    }
}

TEST_CASE("chunk orders") {
    CHECK(ChunkOrder::original(5).is_identity());
    CHECK(ChunkOrder::randomized(8, 3) == ChunkOrder::randomized(8, 3));
    CHECK(ChunkOrder::randomized(8, 3).mode() == ChunkOrder::Mode::Randomized);
    CHECK(kind_of([] { ChunkOrder::from_permutation({0, 0, 1}); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { ChunkOrder::from_permutation({0, 3, 1}); }) == ErrorKind::ConfigError);
    const auto ds = random_codes(10, 3, 4, 1);
    CHECK(kind_of([&] { sort_encodings(ds, ChunkOrder::original(4)); }) == ErrorKind::ConfigError);
}

TEST_CASE("four-code example: counts and exact bytes") {
    const auto tree = build(four_codes());
    const auto s = stats(tree);
    CHECK(s.internal_nodes == 3);
    CHECK(s.leaf_nodes == 4);
    CHECK(s.total_postfix == 4);
    CHECK(s.avg_postfix == 1.0);
    CHECK(s.node_count == 7);
    CHECK(s.memory_bytes == 34);
    CHECK(s.formula_bytes() == 34);
    const std::vector<std::uint8_t> expected{
        9, 3, 9, 9, 9, 3, 0, 0, 0,  // leaf 9 + postfix 9 9 9, id 3
        1, 0,                       // internal chunk 1, depth 0
        2, 2,                       // internal chunk 2, depth 1
        7, 3, 7, 2, 0, 0, 0,        // leaf 7 + postfix 7, id 2
        3, 4,                       // internal chunk 3, depth 2
        4, 3, 0, 0, 0, 0,           // leaf 4, id 0
        5, 3, 1, 0, 0, 0,           // leaf 5, id 1
    };
    CHECK(std::vector<std::uint8_t>(tree.bytes().begin(), tree.bytes().end()) == expected);

    std::vector<std::size_t> postfix;
    parse_records(tree.bytes(), 4, 16, [&](const NodeRecord& r) {
        if (r.leaf) {
            postfix.push_back(r.postfix.size());
        }
    });
    std::sort(postfix.begin(), postfix.end());
    CHECK(postfix == std::vector<std::size_t>{0, 0, 1, 3});

    const TrieOracle oracle(four_codes());
    CHECK(oracle.internal == 3);
    CHECK(oracle.leaves == 4);
    CHECK(oracle.postfix == 4);
    CHECK(oracle.bytes() == 34);
}

TEST_CASE("identical codes collapse to one leaf or a chain") {
    for (std::size_t n : {1U, 5U, 127U, 128U, 254U, 255U, 1000U}) {
        EncodedDataset ds(6, 8);
        for (std::size_t i = 0; i < n; ++i) {
            ds.append(std::vector<Chunk>{1, 2, 3, 4, 5, 6}, static_cast<VectorId>(n - i));
        }
        const auto tree = build(ds);
        const auto s = stats(tree);
        const std::size_t records = (n + 126) / 127;
        CHECK(s.internal_nodes == 0);
        CHECK(s.leaf_nodes == records);
        CHECK(s.total_postfix == records * 5);
        CHECK(s.memory_bytes == 4 * n + records * (2 + 5));
        if (n <= 127) {
            CHECK(tree.size_bytes() == 4 * n + 2 + 5);
        }
        // Every chain link except the last is full.
        std::vector<std::size_t> counts;
        parse_records(tree.bytes(), 6, 8, [&](const NodeRecord& r) { counts.push_back(r.id_count()); });
        for (std::size_t i = 0; i + 1 < counts.size(); ++i) {
            CHECK(counts[i] == 127);
        }
        CHECK(enumerate_lexicographic(tree) == ds);
    }
}

TEST_CASE("all-distinct first chunk gives only depth-0 leaves") {
    EncodedDataset ds(5, 256);
    for (std::size_t i = 0; i < 200; ++i) {
        ds.append(std::vector<Chunk>{static_cast<Chunk>(i), 1, 2, 3, 4}, static_cast<VectorId>(i));
    }
    const auto tree = build(ds);
    const auto s = stats(tree);
    CHECK(s.internal_nodes == 0);
    CHECK(s.leaf_nodes == 200);
    CHECK(s.total_postfix == 200 * 4);
    CHECK(s.avg_postfix == 4.0);
    CHECK(s.memory_bytes == 4 * 200 + 2 * 200 + 200 * 4);
    std::vector<float> out(200);
    const auto table = random_table(5, 256, 3);
    CHECK(traverse_distances_counted(tree, table, out) == 200 * 5);
}

TEST_CASE("construct matches the trie oracle on random data") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t m = 1 + rng() % 10;
        const std::size_t k = trial % 3 == 0 ? 2 : (trial % 3 == 1 ? 16 : 256);
        const std::size_t n = 1 + rng() % 3000;
        const auto ds = trial % 2 ? random_codes(n, m, k, rng()) : clustered_codes(n, m, k, 1 + rng() % 20, 0.2, rng());
        const auto tree = build(ds);
        const auto s = stats(tree);
        const TrieOracle oracle(ds);
        CHECK(s.internal_nodes == oracle.internal);
        CHECK(s.leaf_nodes == oracle.leaves);
        CHECK(s.total_postfix == oracle.postfix);
        CHECK(s.memory_bytes == oracle.bytes());
        CHECK(s.memory_bytes == s.formula_bytes());
        CHECK(s.avg_postfix <= static_cast<double>(m - 1));
    }
}

TEST_CASE("construct preconditions") {
    CHECK(kind_of([] { construct(EncodedDataset(4, 16)); }) == ErrorKind::EmptyDataset);
    const EncodedDataset unsorted(2, 4, {2, 1, 1, 2}, {0, 1});
    CHECK(kind_of([&] { construct(unsorted); }) == ErrorKind::PreconditionViolation);
    const auto wide = random_codes(3, 128, 4, 1);
    CHECK(kind_of([&] { construct(sort_lexicographic(wide)); }) == ErrorKind::ConfigError);
    const auto ok = random_codes(50, 127, 4, 2);
    CHECK(stats(construct(sort_lexicographic(ok))).num_vectors == 50);
}

TEST_CASE("round trip through leaf enumeration") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t m = 1 + rng() % 8;
        const std::size_t n = 1 + rng() % 2000;
        const auto ds = clustered_codes(n, m, 4, 1 + rng() % 5, trial % 4 == 0 ? 0.0 : 0.1, rng());
        const auto sorted = sort_lexicographic(ds);
        const auto tree = construct(sorted);
        CHECK(enumerate_lexicographic(tree) == sorted);
        CHECK(stable_by_code(enumerate_leaves(tree)) == sorted);
        const auto reparsed = parse(std::vector<std::uint8_t>(tree.bytes().begin(), tree.bytes().end()), n,
                                    ds.num_codewords(), m);
        CHECK(reparsed == tree);
        CHECK(enumerate_lexicographic(reparsed) == sorted);
    }
}

TEST_CASE("construct is deterministic") {
    const auto ds = clustered_codes(5000, 8, 256, 50, 0.2, 3);
    const auto order = ChunkOrder::randomized(8, 5);
    const auto a = construct(sort_encodings(ds, order), {order, 0, 8});
    const auto b = construct(sort_encodings(ds, order), {order, 0, 8});
    CHECK(a == b);
}

TEST_CASE("traversal equals the ADC oracle") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = std::vector<std::size_t>{4, 8, 16}[trial % 3];
        const std::size_t k = trial % 2 ? 16 : 256;
        const std::size_t n = 1 + rng() % 5000;
        const auto ds = clustered_codes(n, m, k, 1 + rng() % 100, 0.15, rng());
        const auto table = random_table(m, k, rng());
        const auto ref = naive_adc(table, ds);

        const auto tree = build(ds);
        std::vector<float> out(tree.id_bound(), -1.0F);
        const auto lookups = traverse_distances_counted(tree, table, out);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(out[ds.id(i)] == ref[i]);  // identity order: same summation order, bit-equal
        }
        const auto s = stats(tree);
        CHECK(lookups == s.lookup_count());
        CHECK(lookups <= n * m);

        const auto order = ChunkOrder::randomized(m, rng());
        const auto permuted = construct(sort_encodings(ds, order), {order, 0, m});
        std::vector<float> pout(permuted.id_bound());
        traverse_distances(permuted, table, pout);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(pout[ds.id(i)] - ref[i]) <= 1e-4);
        }

        std::vector<float> par(tree.id_bound(), -1.0F);
        traverse_distances_parallel(tree, table, par, 3);
        CHECK(par == out);
    }
}

TEST_CASE("leaf-order and per-record outputs agree with the id-indexed scan") {
    const auto ds = clustered_codes(3000, 8, 256, 40, 0.2, 17);
    const auto tree = build(ds);
    const auto table = random_table(8, 256, 18);
    std::vector<float> by_id(tree.id_bound());
    traverse_distances(tree, table, by_id);
    const auto ids = leaf_ids(tree);
    REQUIRE(ids.size() == ds.size());
    std::vector<float> slots(ids.size());
    traverse_leaf_order(tree, table, slots);
    for (std::size_t j = 0; j < ids.size(); ++j) {
        CHECK(slots[j] == by_id[ids[j]]);
    }
    std::vector<float> records(tree.leaf_records());
    traverse_leaf_records(tree, table, records);
    const auto record_of = leaf_record_of(tree);
    for (auto id : ids) {
        CHECK(records[record_of[id]] == by_id[id]);
    }
    CHECK(tree.leaf_records() == stats(tree).leaf_nodes);
}

TEST_CASE("lookups shrink when prefixes are shared") {
    EncodedDataset ds(8, 256);
    std::mt19937_64 rng(4);
    for (std::size_t i = 0; i < 2000; ++i) {
        std::vector<Chunk> c{7, 7, 7, 7};
        for (int j = 0; j < 4; ++j) {
            c.push_back(static_cast<Chunk>(rng() % 256));
        }
        ds.append(c, static_cast<VectorId>(i));
    }
    const auto tree = build(ds);
    std::vector<float> out(2000);
    const auto lookups = traverse_distances_counted(tree, random_table(8, 256, 1), out);
    CHECK(lookups < 2000 * 8);
    CHECK(static_cast<double>(lookups) <= 0.55 * 2000 * 8);
}

TEST_CASE("all-zero table gives zeros") {
    const auto ds = clustered_codes(500, 4, 16, 5, 0.3, 2);
    const auto tree = build(ds);
    std::vector<float> out(tree.id_bound(), 1.0F);
    traverse_distances(tree, DistanceTable(4, 16), out);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(out[ds.id(i)] == 0.0F);
    }
}

TEST_CASE("traversal argument checks") {
    const auto tree = build(four_codes());
    std::vector<float> out(4);
    CHECK(kind_of([&] { traverse_distances(tree, DistanceTable(5, 16), out); }) == ErrorKind::ConfigError);
    CHECK(kind_of([&] { traverse_distances(tree, DistanceTable(4, 8), out); }) == ErrorKind::ConfigError);
    std::vector<float> small(3);
    CHECK(kind_of([&] { traverse_distances(tree, DistanceTable(4, 16), small); }) == ErrorKind::ConfigError);
}

TEST_CASE("the parser rejects corrupt buffers") {
    const auto good = build(four_codes());
    const std::vector<std::uint8_t> bytes(good.bytes().begin(), good.bytes().end());
    CHECK(parse(bytes, 4, 16, 4) == good);

    auto corrupt = [&](std::vector<std::uint8_t> b, std::size_t n = 4, std::size_t k = 16, std::size_t layers = 4) {
        return kind_of([&] { parse(std::move(b), n, k, layers); });
    };
    // truncated id
    CHECK(corrupt({bytes.begin(), bytes.end() - 1}) == ErrorKind::CorruptBuffer);
    // chunk >= K
    auto big = bytes;
    big[0] = 16;
    CHECK(corrupt(big) == ErrorKind::CorruptBuffer);
    // leaf with zero ids
    CHECK(corrupt({3, 1, 0, 0, 0}, 0) == ErrorKind::CorruptBuffer);
    // internal node whose only child is a leaf
    CHECK(corrupt({1, 0, 2, 3, 0, 0, 0, 0, 0}, 1) == ErrorKind::CorruptBuffer);
    // internal node on the last layer
    CHECK(corrupt({1, 6}) == ErrorKind::CorruptBuffer);
    // depth jumps by two
    CHECK(corrupt({1, 0, 2, 4, 3, 3, 0, 0, 0, 0, 4, 3, 1, 0, 0, 0}, 2) == ErrorKind::CorruptBuffer);
    // internal with no children
    CHECK(corrupt({1, 0}, 0) == ErrorKind::CorruptBuffer);
    // leaves out of chunk order
    CHECK(corrupt({5, 3, 0, 0, 0, 0, 0, 0, 0, 4, 3, 0, 0, 0, 1, 0, 0, 0}, 2) == ErrorKind::CorruptBuffer);
    // id count disagrees with N
    CHECK(corrupt(bytes, 5) == ErrorKind::CorruptBuffer);
    // duplicate id
    CHECK(corrupt({4, 3, 0, 0, 0, 0, 0, 0, 0, 5, 3, 0, 0, 0, 0, 0, 0, 0}, 2) == ErrorKind::CorruptBuffer);
    // a chain link that is not full
    std::vector<std::uint8_t> chain{1, static_cast<std::uint8_t>((2 << 1) | 1), 9, 9, 9, 0, 0, 0, 0, 1, 0, 0, 0,
                                    1, static_cast<std::uint8_t>((1 << 1) | 1), 9, 9, 9, 2, 0, 0, 0};
    CHECK(corrupt(chain, 3) == ErrorKind::CorruptBuffer);
}
