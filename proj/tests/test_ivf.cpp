#include "support.hpp"

#include "etree/bench.hpp"
#include "etree/error.hpp"
#include "etree/ivf.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

using namespace etree;
using namespace etree::testing;
using namespace etree::ivf;

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

IvfParams small_params(std::size_t kprime, std::size_t trees = 1) {
    IvfParams p;
    p.coarse_centroids = kprime;
    p.num_subspaces = 4;
    p.num_codewords = 16;
    p.iterations = 6;
    p.seed = 3;
    p.trees_per_list = trees;
    return p;
}

const VectorSet& shared_data() {
    static const VectorSet data = bench::gen_synthetic({3000, 8, 12, 0.05, 21});
    return data;
}

const VectorSet& shared_queries() {
    static const VectorSet q = bench::gen_synthetic({20, 8, 12, 0.05, 22});
    return q;
}

// Same ids in the same order, distances within tol.
void check_close(const QueryResult& a, const QueryResult& b, float tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i].distance - b[i].distance) <= tol);
    }
}

}  // namespace

TEST_CASE("lists partition the data by nearest centroid") {
    const auto& data = shared_data();
    const auto index = build_ivf(data, small_params(16));
    REQUIRE(index.lists.size() == 16);
    std::set<VectorId> seen;
    for (std::size_t c = 0; c < 16; ++c) {
        const auto& list = index.lists[c];
        CHECK(list.codes.size() == list.ids.size());
        for (std::size_t i = 0; i < list.ids.size(); ++i) {
            CHECK(seen.insert(list.ids[i]).second);
            CHECK(index.coarse.nearest(data.row(list.ids[i]), 1)[0] == c);
            CHECK(list.codes.id(i) == i);
            std::vector<float> r(8);
            for (std::size_t j = 0; j < 8; ++j) {
                r[j] = data.row(list.ids[i])[j] - index.coarse.centroids.row(c)[j];
            }
            std::vector<Chunk> code(4);
            encode(index.codebook, r, code);
            CHECK(std::equal(code.begin(), code.end(), list.codes.code(i).begin()));
        }
        if (!list.ids.empty()) {
            CHECK(list.forest.num_vectors() == list.ids.size());
        }
    }
    CHECK(seen.size() == data.size());
}

TEST_CASE("one list and one list per vector") {
    const auto data = bench::gen_synthetic({64, 8, 4, 0.1, 5});
    const auto single = build_ivf(data, small_params(1));
    CHECK(single.lists[0].ids.size() == 64);
    const auto per_vector = build_ivf(data, small_params(64));
    for (const auto& list : per_vector.lists) {
        CHECK(list.ids.size() <= 1);
    }
    const auto q = bench::gen_synthetic({1, 8, 4, 0.1, 6});
    CHECK(ivf_search(single, q.row(0), 1, 10).size() == 10);
    CHECK(ivf_search(per_vector, q.row(0), 64, 100).size() == 64);
}

TEST_CASE("probing every list equals the exhaustive residual scan") {
    const auto index = build_ivf(shared_data(), small_params(16));
    const auto& queries = shared_queries();
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto all = exhaustive_residual_search(index, queries.row(q), 50);
        CHECK(ivf_search(index, queries.row(q), 16, 50, ScanMethod::Adc) == all);
        CHECK(ivf_search(index, queries.row(q), 16, 50, ScanMethod::Tree) == all);
    }
}

TEST_CASE("tree and ADC scans agree inside lists") {
    const auto& queries = shared_queries();
    for (std::size_t trees : {1U, 2U}) {
        const auto index = build_ivf(shared_data(), small_params(16, trees));
        for (std::size_t q = 0; q < queries.size(); ++q) {
            for (std::size_t w : {1U, 4U}) {
                const auto tree = ivf_search(index, queries.row(q), w, 20, ScanMethod::Tree);
                const auto adc = ivf_search(index, queries.row(q), w, 20, ScanMethod::Adc);
                if (trees == 1) {
                    CHECK(tree == adc);
                } else {
                    check_close(tree, adc, 1e-4F);
                }
            }
        }
    }
}

TEST_CASE("recall does not drop as w grows") {
    const auto& data = shared_data();
    const auto& queries = shared_queries();
    const auto index = build_ivf(data, small_params(16));
    const auto truth = brute_force_neighbors(data, queries, 1);
    double last = 0.0;
    for (std::size_t w : {1U, 2U, 4U, 8U, 16U}) {
        std::vector<QueryResult> results;
        for (std::size_t q = 0; q < queries.size(); ++q) {
            results.push_back(ivf_search(index, queries.row(q), w, 100));
        }
        const double r = recall_at(results, truth, 100);
        CHECK(r >= last);
        last = r;
    }
    CHECK(last > 0.5);
}

TEST_CASE("search timing is filled") {
    const auto index = build_ivf(shared_data(), small_params(16));
    SearchTiming t;
    ivf_search(index, shared_queries().row(0), 4, 10, ScanMethod::Tree, &t);
    CHECK(t.total_ms() >= 0.0);
    CHECK(t.total_ms() == doctest::Approx(t.coarse_ms + t.table_ms + t.traversal_ms + t.merge_ms));
}

TEST_CASE("ground truth and recall helpers") {
    const VectorSet data(1, {0.0F, 10.0F, 3.0F});
    const VectorSet q(1, {2.9F});
    CHECK(brute_force_neighbors(data, q, 2) == std::vector<std::vector<std::int32_t>>{{2, 0}});
    const std::vector<QueryResult> res{{{0, 1.0F}, {2, 2.0F}}};
    CHECK(recall_at(res, {{2}}, 1) == 0.0);
    CHECK(recall_at(res, {{2}}, 2) == 1.0);
    CHECK(kind_of([&] { recall_at(res, {}, 1); }) == ErrorKind::ConfigError);
}

TEST_CASE("invalid parameters") {
    const auto& data = shared_data();
    const auto index = build_ivf(data, small_params(8));
    const auto q = shared_queries().row(0);
    CHECK(kind_of([&] { ivf_search(index, q, 0, 10); }) == ErrorKind::ConfigError);
    CHECK(kind_of([&] { ivf_search(index, q, 9, 10); }) == ErrorKind::ConfigError);
    CHECK(kind_of([&] { ivf_search(index, q.subspan(1), 1, 10); }) == ErrorKind::DimensionError);
    const auto tiny = bench::gen_synthetic({10, 8, 2, 0.1, 1});
    CHECK(kind_of([&] { build_ivf(tiny, small_params(11)); }) == ErrorKind::InsufficientData);
    CHECK(kind_of([&] { build_ivf(tiny, small_params(0)); }) == ErrorKind::ConfigError);
    auto bad_m = small_params(2);
    bad_m.num_subspaces = 3;
    CHECK(kind_of([&] { build_ivf(tiny, bad_m); }) == ErrorKind::InvalidSubspaceSplit);
    CHECK(kind_of([&] { build_ivf(tiny, small_params(2, 5)); }) == ErrorKind::ConfigError);
}

TEST_CASE("index save and load round trip") {
    const auto dir = std::filesystem::temp_directory_path() / ("etree_ivf_" + std::to_string(std::random_device{}()));
    // More lists than clusters leaves some lists empty.
    const auto data = bench::gen_synthetic({400, 8, 3, 0.001, 8});
    const auto index = build_ivf(data, small_params(32, 2));
    save_index(dir, index);
    const auto back = load_index(dir);
    CHECK(back.num_vectors == index.num_vectors);
    CHECK(back.trees_per_list == 2);
    CHECK(back.codebook == index.codebook);
    CHECK(back.coarse.centroids.values() == index.coarse.centroids.values());
    REQUIRE(back.lists.size() == index.lists.size());
    for (std::size_t c = 0; c < back.lists.size(); ++c) {
        CHECK(back.lists[c].ids == index.lists[c].ids);
        CHECK(back.lists[c].codes == index.lists[c].codes);
        CHECK(back.lists[c].forest.num_trees() == index.lists[c].forest.num_trees());
        for (std::size_t t = 0; t < back.lists[c].forest.num_trees(); ++t) {
            CHECK(back.lists[c].forest.trees()[t] == index.lists[c].forest.trees()[t]);
        }
    }
    const auto q = shared_queries().row(1);
    CHECK(ivf_search(back, q, 32, 10) == ivf_search(index, q, 32, 10));
    std::filesystem::remove(dir / "meta.json");
    CHECK(kind_of([&] { load_index(dir); }) == ErrorKind::IoError);
    std::filesystem::remove_all(dir);
}
