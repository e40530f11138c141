#include "support.hpp"

#include "etree/error.hpp"
#include "etree/kmeans.hpp"
#include "etree/quantizer.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
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

Codebook random_codebook(std::size_t d, std::size_t m, std::size_t k, std::uint64_t seed) {
    const auto v = random_vectors(m * k, d / m, seed);
    return Codebook(d, m, k, v.values());
}

double direct_sq(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]) - b[i];
        s += x * x;
    }
    return s;
}

}  // namespace

TEST_CASE("kmeans objective never increases") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto data = random_vectors(500, 3, seed);
        const auto r = kmeans(data.values(), 3, 16, 30, seed);
        REQUIRE(!r.objective.empty());
        for (std::size_t i = 1; i < r.objective.size(); ++i) {
            CHECK(r.objective[i] <= r.objective[i - 1]);
        }
    }
}

TEST_CASE("kmeans with k equal to n has zero error") {
    const auto data = random_vectors(40, 4, 3);
    const auto r = kmeans(data.values(), 4, 40, 5, 9);
    CHECK(r.objective.back() == 0.0);
}

TEST_CASE("kmeans finds two separated cluster means") {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> noise(0.0F, 0.05F);
    std::vector<float> pts;
    double sum_a[2] = {0, 0};
    double sum_b[2] = {0, 0};
    const int per = 200;
    for (int i = 0; i < per; ++i) {
        const float a0 = noise(rng), a1 = noise(rng);
        const float b0 = 10.0F + noise(rng), b1 = -4.0F + noise(rng);
        pts.insert(pts.end(), {a0, a1, b0, b1});
        sum_a[0] += a0;
        sum_a[1] += a1;
        sum_b[0] += b0;
        sum_b[1] += b1;
    }
    const auto r = kmeans(pts, 2, 2, 10, 1);
    std::vector<std::array<double, 2>> got{{r.centroids[0], r.centroids[1]}, {r.centroids[2], r.centroids[3]}};
    std::sort(got.begin(), got.end());
    CHECK(got[0][0] == doctest::Approx(sum_a[0] / per).epsilon(1e-5));
    CHECK(got[0][1] == doctest::Approx(sum_a[1] / per).epsilon(1e-5));
    CHECK(got[1][0] == doctest::Approx(sum_b[0] / per).epsilon(1e-5));
    CHECK(got[1][1] == doctest::Approx(sum_b[1] / per).epsilon(1e-5));
}

TEST_CASE("kmeans re-seeds empty clusters") {
    // Six copies of one point plus two outliers: with k=3 every centroid must own a point.
    std::vector<float> pts{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 5, 5, 9, 9};
    const auto r = kmeans(pts, 2, 3, 10, 0);
    std::vector<int> owned(3, 0);
    for (auto a : r.assignment) {
        owned[a]++;
    }
    for (int o : owned) {
        CHECK(o > 0);
    }
    CHECK(r.objective.back() == 0.0);
}

TEST_CASE("nearest_centroid and CentroidScanner agree with a brute-force argmin") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 1 + rng() % 6;
        const std::size_t k = 1 + rng() % 300;
        const auto c = random_vectors(k, dim, rng());
        const auto x = random_vectors(1, dim, rng());
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            const double d = direct_sq(x.row(0), c.row(j));
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        CHECK(nearest_centroid(c.values(), dim, x.row(0)) == best);
        CHECK(CentroidScanner(c.values(), dim).nearest(x.row(0)) == best);
    }
}

TEST_CASE("train_pq validates its input") {
    const auto data = random_vectors(10, 4, 1);
    TrainOptions opt;
    opt.num_subspaces = 2;
    opt.num_codewords = 16;
    CHECK(kind_of([&] { train_pq(data, opt); }) == ErrorKind::InsufficientData);
    opt.num_codewords = 4;
    opt.num_subspaces = 3;
    CHECK(kind_of([&] { train_pq(data, opt); }) == ErrorKind::InvalidSubspaceSplit);
    opt.num_subspaces = 2;
    auto bad = data;
    bad.row(3)[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK(kind_of([&] { train_pq(bad, opt); }) == ErrorKind::InvalidVector);
    opt.iterations = 0;
    CHECK(kind_of([&] { train_pq(data, opt); }) == ErrorKind::ConfigError);
}

TEST_CASE("train_pq is deterministic and reports monotone objectives") {
    const auto data = random_vectors(2000, 8, 4);
    TrainOptions opt;
    opt.num_subspaces = 4;
    opt.num_codewords = 32;
    opt.iterations = 12;
    opt.seed = 77;
    TrainReport a_rep;
    const auto a = train_pq(data, opt, &a_rep);
    const auto b = train_pq(data, opt);
    CHECK(a == b);
    REQUIRE(a_rep.objective.size() == 4);
    for (const auto& obj : a_rep.objective) {
        for (std::size_t i = 1; i < obj.size(); ++i) {
            CHECK(obj[i] <= obj[i - 1]);
        }
    }
    opt.seed = 78;
    CHECK(!(train_pq(data, opt) == a));
}

TEST_CASE("train_pq with K = N reproduces every training subvector") {
    const auto data = random_vectors(16, 4, 8);
    TrainOptions opt;
    opt.num_subspaces = 2;
    opt.num_codewords = 16;
    opt.iterations = 3;
    const auto cb = train_pq(data, opt);
    const auto ds = encode_all(cb, data);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto back = decode(cb, ds.code(i));
        CHECK(direct_sq(back, data.row(i)) == 0.0);
    }
}

TEST_CASE("encode picks the nearest scalar") {
    Codebook cb(2, 2, 2, {0.0F, 1.0F, 0.0F, 1.0F});
    const std::vector<float> v{0.9F, 0.1F};
    CHECK(encode(cb, v) == std::vector<Chunk>{1, 0});
}

TEST_CASE("encode breaks ties toward the smaller index") {
    Codebook cb(1, 1, 3, {1.0F, 1.0F, 3.0F});
    CHECK(encode(cb, std::vector<float>{2.0F}) == std::vector<Chunk>{0});
    Codebook cb2(1, 1, 3, {5.0F, 1.0F, 3.0F});
    CHECK(encode(cb2, std::vector<float>{2.0F}) == std::vector<Chunk>{1});
}

TEST_CASE("encode matches an exhaustive argmin per subspace") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 1 + rng() % 4;
        const std::size_t sub = 1 + rng() % 4;
        const std::size_t k = 1 + rng() % 256;
        const auto cb = random_codebook(m * sub, m, k, rng());
        const auto v = random_vectors(1, m * sub, rng());
        const auto code = encode(cb, v.row(0));
        for (std::size_t j = 0; j < m; ++j) {
            const auto part = v.row(0).subspan(j * sub, sub);
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (direct_sq(part, cb.centroid(j, c)) < direct_sq(part, cb.centroid(j, best))) {
                    best = c;
                }
            }
            CHECK(code[j] == best);
        }
    }
}

TEST_CASE("encode of a codeword concatenation recovers its indices") {
    const auto cb = random_codebook(12, 4, 64, 31);
    const std::vector<Chunk> code{3, 7, 63, 0};
    const auto v = decode(cb, code);
    CHECK(encode(cb, v) == code);
}

TEST_CASE("encode rejects a wrong-length vector") {
    const auto cb = random_codebook(8, 2, 4, 1);
    CHECK(kind_of([&] { encode(cb, std::vector<float>(7, 0.0F)); }) == ErrorKind::DimensionError);
}

TEST_CASE("decode indexes the codebook directly") {
    const auto cb = random_codebook(16, 4, 16, 2);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        std::vector<Chunk> code(4);
        for (auto& c : code) {
            c = static_cast<Chunk>(rng() % 16);
        }
        const auto v = decode(cb, code);
        for (std::size_t m = 0; m < 4; ++m) {
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(v[m * 4 + j] == cb.centroid(m, code[m])[j]);
            }
        }
    }
    const auto one = random_codebook(5, 1, 8, 4);
    const auto w = decode(one, std::vector<Chunk>{6});
    CHECK(std::equal(w.begin(), w.end(), one.centroid(0, 6).begin()));
    CHECK(kind_of([&] { decode(cb, std::vector<Chunk>{0, 0, 16, 0}); }) == ErrorKind::InvalidCode);
}

TEST_CASE("distance table entries") {
    const auto cb = random_codebook(12, 4, 8, 5);
    std::vector<float> q;
    for (std::size_t m = 0; m < 4; ++m) {
        const auto c = cb.centroid(m, 0);
        q.insert(q.end(), c.begin(), c.end());
    }
    const auto t = build_distance_table(cb, q);
    for (std::size_t m = 0; m < 4; ++m) {
        CHECK(t.at(m, 0) == 0.0F);
    }
    const auto rq = random_vectors(1, 12, 6);
    const auto rt = build_distance_table(cb, rq.row(0));
    CHECK(rt.at(2, 5) == doctest::Approx(direct_sq(rq.row(0).subspan(6, 3), cb.centroid(2, 5))).epsilon(1e-6));

    Codebook zero(4, 2, 3, std::vector<float>(12, 0.0F));
    const auto zt = build_distance_table(zero, std::vector<float>(4, 0.0F));
    for (float e : zt.entries()) {
        CHECK(e == 0.0F);
    }
    CHECK(kind_of([&] { build_distance_table(cb, std::vector<float>(11, 0.0F)); }) == ErrorKind::DimensionError);
}

TEST_CASE("distance table rows follow a codeword permutation") {
    const auto cb = random_codebook(8, 2, 16, 7);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(8));
    std::vector<float> cents = cb.centroids();
    for (std::size_t k = 0; k < 16; ++k) {
        const auto src = cb.centroid(1, perm[k]);
        std::copy(src.begin(), src.end(), cents.begin() + static_cast<std::ptrdiff_t>((16 + k) * 4));
    }
    const Codebook permuted(8, 2, 16, cents);
    const auto q = random_vectors(1, 8, 9);
    const auto a = build_distance_table(cb, q.row(0));
    const auto b = build_distance_table(permuted, q.row(0));
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(b.at(0, k) == a.at(0, k));
        CHECK(b.at(1, k) == a.at(1, perm[k]));
    }
}

TEST_CASE("adc_distance equals the distance to the decoded vector") {
    std::mt19937_64 rng(10);
    const auto cb = random_codebook(32, 8, 256, 11);
    for (int t = 0; t < 200; ++t) {
        const auto q = random_vectors(1, 32, rng());
        std::vector<Chunk> code(8);
        for (auto& c : code) {
            c = static_cast<Chunk>(rng() % 256);
        }
        const auto table = build_distance_table(cb, q.row(0));
        const double direct = direct_sq(q.row(0), decode(cb, code));
        CHECK(adc_distance(table, code) == doctest::Approx(direct).epsilon(1e-5));
    }
    std::vector<Chunk> code{1, 2, 3, 4, 5, 6, 7, 8};
    const auto q = decode(cb, code);
    CHECK(adc_distance(build_distance_table(cb, q), code) == doctest::Approx(0.0).epsilon(1e-6));
    const auto one = random_table(1, 4, 3);
    CHECK(adc_distance(one, std::vector<Chunk>{2}) == one.at(0, 2));
    CHECK(kind_of([&] { adc_distance(one, std::vector<Chunk>{4}); }) == ErrorKind::InvalidCode);
}

TEST_CASE("encode is idempotent on decoded codes with unique nearest codewords") {
    const auto cb = random_codebook(16, 4, 32, 12);
    const auto ds = random_codes(300, 4, 32, 13);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::vector<Chunk> code(ds.code(i).begin(), ds.code(i).end());
        CHECK(encode(cb, decode(cb, code)) == code);
    }
}

TEST_CASE("adc_scan matches per-code adc_distance") {
    for (std::size_t m : {4U, 8U, 16U, 5U}) {
        const auto ds = random_codes(10000, m, 256, m);
        const auto table = random_table(m, 256, m + 1);
        const auto out = adc_scan(table, ds);
        REQUIRE(out.size() == ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            CHECK(out[i] == adc_distance(table, ds.code(i)));
        }
    }
    EncodedDataset empty(4, 16);
    CHECK(adc_scan(random_table(4, 16, 1), empty).empty());
    const auto single = random_codes(1, 4, 16, 2);
    const auto t = random_table(4, 16, 3);
    CHECK(adc_scan(t, single)[0] == adc_distance(t, single.code(0)));
    CHECK(kind_of([&] { adc_scan(random_table(5, 16, 1), single); }) == ErrorKind::ConfigError);
    CHECK(kind_of([&] { adc_scan(random_table(4, 32, 1), single); }) == ErrorKind::ConfigError);
}

TEST_CASE("EncodedDataset validation") {
    CHECK(kind_of([] { EncodedDataset(2, 4, {0, 1, 2, 4}, {0, 1}); }) == ErrorKind::InvalidCode);
    CHECK(kind_of([] { EncodedDataset(2, 4, {0, 1, 2, 3}, {5, 5}); }) == ErrorKind::ConfigError);
    CHECK(kind_of([] { Codebook(6, 4, 2, std::vector<float>(12, 0.0F)); }) == ErrorKind::InvalidSubspaceSplit);
    CHECK(kind_of([] { Codebook(4, 2, 257, std::vector<float>(4 * 257, 0.0F)); }) == ErrorKind::ConfigError);
}
