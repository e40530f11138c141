#include "etree/ivf.hpp"

#include "etree/error.hpp"
#include "etree/io.hpp"
#include "etree/kmeans.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

namespace etree::ivf {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<float> sample_rows(const VectorSet& data, std::size_t count, std::uint64_t seed) {
    if (count >= data.size()) {
        return data.values();
    }
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(count);
    std::sort(rows.begin(), rows.end());
    std::vector<float> out;
    out.reserve(count * data.dim());
    for (auto r : rows) {
        const auto v = data.row(r);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

std::vector<float> residual(std::span<const float> x, std::span<const float> centroid) {
    std::vector<float> r(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        r[j] = x[j] - centroid[j];
    }
    return r;
}

EForest list_forest(const EncodedDataset& codes, std::size_t trees) {
    if (codes.empty()) {
        return {};
    }
    const std::size_t m = codes.num_chunks();
    return build_forest(codes, ChunkOrder::original(m), ForestConfig::even(m, trees));
}

}  // namespace

SearchTiming& SearchTiming::operator+=(const SearchTiming& o) noexcept {
    coarse_ms += o.coarse_ms;
    table_ms += o.table_ms;
    traversal_ms += o.traversal_ms;
    merge_ms += o.merge_ms;
    return *this;
}

std::vector<std::size_t> CoarseQuantizer::nearest(std::span<const float> q, std::size_t w) const {
    std::vector<std::pair<double, std::size_t>> dist(size());
    for (std::size_t c = 0; c < size(); ++c) {
        dist[c] = {squared_distance(q, centroids.row(c)), c};
    }
    w = std::min(w, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(w), dist.end());
    std::vector<std::size_t> out(w);
    for (std::size_t i = 0; i < w; ++i) {
        out[i] = dist[i].second;
    }
    return out;
}

InvertedIndex build_ivf(const VectorSet& data, const IvfParams& params) {
    const std::size_t n = data.size();
    const std::size_t d = data.dim();
    if (params.coarse_centroids == 0) {
        throw Error(ErrorKind::ConfigError, "K' must be >= 1");
    }
    if (n < params.coarse_centroids) {
        throw Error(ErrorKind::InsufficientData,
                    std::to_string(n) + " vectors for K'=" + std::to_string(params.coarse_centroids));
    }
    if (params.num_subspaces == 0 || d % params.num_subspaces != 0) {
        throw Error(ErrorKind::InvalidSubspaceSplit, "d=" + std::to_string(d) + " is not divisible into M=" +
                                                         std::to_string(params.num_subspaces));
    }
    if (params.trees_per_list == 0 || params.trees_per_list > params.num_subspaces) {
        throw Error(ErrorKind::ConfigError, "trees per list must be in [1, M]");
    }
    data.check_finite();

    auto cap = [&](std::size_t floor) {
        return params.max_training_points == 0 ? n : std::max(params.max_training_points, floor);
    };

    InvertedIndex index;
    index.num_vectors = n;
    index.trees_per_list = params.trees_per_list;

    const auto coarse_sample = sample_rows(data, cap(params.coarse_centroids), params.seed);
    auto km = kmeans(coarse_sample, d, params.coarse_centroids, params.iterations, params.seed);
    index.coarse.centroids = VectorSet(d, std::move(km.centroids));

    std::vector<std::uint32_t> assignment(n);
    VectorSet residuals(d);
    residuals.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = nearest_centroid(index.coarse.centroids.values(), d, data.row(i));
        assignment[i] = static_cast<std::uint32_t>(c);
        residuals.push_back(residual(data.row(i), index.coarse.centroids.row(c)));
    }

    TrainOptions train;
    train.num_subspaces = params.num_subspaces;
    train.num_codewords = params.num_codewords;
    train.iterations = params.iterations;
    train.seed = params.seed + 1;
    train.max_points = params.max_training_points == 0 ? 0 : cap(params.num_codewords);
    index.codebook = train_pq(residuals, train);

    const std::size_t m = params.num_subspaces;
    index.lists.resize(params.coarse_centroids);
    for (auto& list : index.lists) {
        list.codes = EncodedDataset(m, params.num_codewords);
    }
    std::vector<Chunk> code(m);
    for (std::size_t i = 0; i < n; ++i) {
        auto& list = index.lists[assignment[i]];
        encode(index.codebook, residuals.row(i), code);
        list.codes.append(code, static_cast<VectorId>(list.ids.size()));
        list.ids.push_back(static_cast<VectorId>(i));
    }
    for (auto& list : index.lists) {
        list.forest = list_forest(list.codes, params.trees_per_list);
    }
    return index;
}

QueryResult ivf_search(const InvertedIndex& index, std::span<const float> query, std::size_t w, std::size_t k,
                       ScanMethod method, SearchTiming* timing) {
    if (query.size() != index.dim()) {
        throw Error(ErrorKind::DimensionError, "query length " + std::to_string(query.size()) + ", index d=" +
                                                   std::to_string(index.dim()));
    }
    if (w == 0 || w > index.coarse.size()) {
        throw Error(ErrorKind::ConfigError,
                    "w=" + std::to_string(w) + " outside [1, " + std::to_string(index.coarse.size()) + "]");
    }
    SearchTiming local;
    auto start = Clock::now();
    const auto probes = index.coarse.nearest(query, w);
    local.coarse_ms = ms_since(start);

    TopK top(k);
    std::vector<float> out;
    for (const auto c : probes) {
        const auto& list = index.lists[c];
        if (list.ids.empty()) {
            continue;
        }
        start = Clock::now();
        const auto table = build_distance_table(index.codebook, residual(query, index.coarse.centroids.row(c)));
        local.table_ms += ms_since(start);

        start = Clock::now();
        out.resize(list.ids.size());
        if (method == ScanMethod::Tree) {
            ForestScanner(list.forest).distances(table, out);
        } else {
            adc_scan(table, list.codes, out);
        }
        local.traversal_ms += ms_since(start);

        start = Clock::now();
        for (std::size_t i = 0; i < out.size(); ++i) {
            top.push(list.ids[i], out[i]);
        }
        local.merge_ms += ms_since(start);
    }
    if (timing != nullptr) {
        *timing += local;
    }
    return top.take();
}

QueryResult exhaustive_residual_search(const InvertedIndex& index, std::span<const float> query, std::size_t k) {
    if (query.size() != index.dim()) {
        throw Error(ErrorKind::DimensionError, "query dimension mismatch");
    }
    TopK top(k);
    for (std::size_t c = 0; c < index.lists.size(); ++c) {
        const auto& list = index.lists[c];
        if (list.ids.empty()) {
            continue;
        }
        const auto table = build_distance_table(index.codebook, residual(query, index.coarse.centroids.row(c)));
        for (std::size_t i = 0; i < list.ids.size(); ++i) {
            top.push(list.ids[i], adc_distance(table, list.codes.code(i)));
        }
    }
    return top.take();
}

std::vector<std::vector<std::int32_t>> brute_force_neighbors(const VectorSet& data, const VectorSet& queries,
                                                             std::size_t k) {
    std::vector<std::vector<std::int32_t>> out;
    out.reserve(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        TopK top(k);
        for (std::size_t i = 0; i < data.size(); ++i) {
            top.push(static_cast<VectorId>(i), static_cast<float>(squared_distance(queries.row(q), data.row(i))));
        }
        auto& row = out.emplace_back();
        for (const auto& nb : top.take()) {
            row.push_back(static_cast<std::int32_t>(nb.id));
        }
    }
    return out;
}

double recall_at(const std::vector<QueryResult>& results, const std::vector<std::vector<std::int32_t>>& truth,
                 std::size_t r) {
    if (results.size() != truth.size()) {
        throw Error(ErrorKind::ConfigError, "result and ground-truth query counts differ");
    }
    if (results.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t q = 0; q < results.size(); ++q) {
        if (truth[q].empty()) {
            continue;
        }
        const auto target = static_cast<VectorId>(truth[q][0]);
        const std::size_t limit = std::min(r, results[q].size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (results[q][i].id == target) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

void save_index(const std::filesystem::path& dir, const InvertedIndex& index) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta = {
        {"format", "etree-ivf"},
        {"version", 1},
        {"num_vectors", index.num_vectors},
        {"dim", index.dim()},
        {"coarse_centroids", index.coarse.size()},
        {"num_subspaces", index.codebook.num_subspaces()},
        {"num_codewords", index.codebook.num_codewords()},
        {"trees_per_list", index.trees_per_list},
    };
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
    io::write_fvecs(dir / "coarse.fvecs", index.coarse.centroids);
    io::save_codebook(dir / "codebook.etcb", index.codebook);

    std::vector<std::vector<std::int32_t>> list_ids;
    EncodedDataset all(index.codebook.num_subspaces(), index.codebook.num_codewords());
    std::ofstream trees(dir / "lists.etre", std::ios::binary | std::ios::trunc);
    for (const auto& list : index.lists) {
        list_ids.emplace_back(list.ids.begin(), list.ids.end());
        for (std::size_t i = 0; i < list.ids.size(); ++i) {
            all.append(list.codes.code(i), list.ids[i]);
        }
        io::write_forest(trees, list.forest);
    }
    if (!trees.flush()) {
        throw Error(ErrorKind::IoError, "write failed for " + (dir / "lists.etre").string());
    }
    io::write_ivecs(dir / "lists.ivecs", list_ids);
    io::save_codes(dir / "codes.etcd", all);
}

InvertedIndex load_index(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) {
        throw Error(ErrorKind::IoError, "cannot open " + (dir / "meta.json").string());
    }
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedFile, "meta.json: " + std::string(e.what()));
    }
    InvertedIndex index;
    index.num_vectors = meta.at("num_vectors").get<std::size_t>();
    index.trees_per_list = meta.at("trees_per_list").get<std::size_t>();
    index.coarse.centroids = io::read_vectors(dir / "coarse.fvecs", io::VectorFormat::Fvecs);
    index.codebook = io::load_codebook(dir / "codebook.etcb");
    const auto list_ids = io::read_ivecs(dir / "lists.ivecs");
    const auto all = io::load_codes(dir / "codes.etcd");
    if (list_ids.size() != index.coarse.size() || all.size() != index.num_vectors) {
        throw Error(ErrorKind::MalformedFile, "index files disagree on list or vector counts");
    }
    std::ifstream trees(dir / "lists.etre", std::ios::binary);
    if (!trees) {
        throw Error(ErrorKind::IoError, "cannot open " + (dir / "lists.etre").string());
    }
    std::size_t pos = 0;
    index.lists.resize(list_ids.size());
    for (std::size_t c = 0; c < list_ids.size(); ++c) {
        auto& list = index.lists[c];
        list.codes = EncodedDataset(all.num_chunks(), all.num_codewords());
        for (auto id : list_ids[c]) {
            if (pos >= all.size() || all.id(pos) != static_cast<VectorId>(id)) {
                throw Error(ErrorKind::MalformedFile, "codes.etcd is not in list order");
            }
            list.codes.append(all.code(pos), static_cast<VectorId>(list.ids.size()));
            list.ids.push_back(static_cast<VectorId>(id));
            ++pos;
        }
        list.forest = io::read_forest(trees, (dir / "lists.etre").string());
        if (list.forest.num_vectors() != list.ids.size()) {
            throw Error(ErrorKind::MalformedFile, "tree for list " + std::to_string(c) + " has the wrong size");
        }
    }
    return index;
}

}  // namespace etree::ivf
