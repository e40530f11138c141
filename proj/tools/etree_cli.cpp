#include "etree/bench.hpp"
#include "etree/eforest.hpp"
#include "etree/error.hpp"
#include "etree/etree.hpp"
#include "etree/io.hpp"
#include "etree/ivf.hpp"
#include "etree/quantizer.hpp"
#include "etree/topk.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace etree;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--seed", common.seed, "random seed")->capture_default_str();
    cmd->add_option("--threads", common.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

// Runs body(begin, end) over [0, n) split into `threads` contiguous parts.
template <class Body>
void parallel_ranges(std::size_t n, std::size_t threads, Body body) {
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        body(std::size_t{0}, n);
        return;
    }
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] { body(n * t / threads, n * (t + 1) / threads); });
    }
}

fs::path with_extension(const fs::path& base, const char* ext) {
    fs::path p = base;
    const auto e = p.extension();
    if (e == ".ivecs" || e == ".fvecs") {
        p.replace_extension();
    }
    p += ext;
    return p;
}

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::size_t n = 10000;
    std::size_t dim = 32;
    std::size_t clusters = 100;
    double stddev = 0.05;
    std::string out;
};

void run_gen(const GenArgs& a, const Common& c) {
    bench::SyntheticSpec spec{a.n, a.dim, a.clusters, a.stddev, c.seed};
    const auto data = bench::gen_synthetic(spec);
    const auto fmt = io::format_from_path(a.out);
    if (fmt == io::VectorFormat::Fvecs) {
        io::write_fvecs(a.out, data);
    } else {
        throw Error(ErrorKind::ConfigError, "gen writes .fvecs only");
    }
    std::cout << "wrote " << data.size() << " vectors of dim " << data.dim() << " to " << a.out << "\n";
}

struct TrainArgs {
    std::string input;
    std::size_t m = 8;
    std::size_t k = 256;
    int iterations = 25;
    std::size_t max_points = 0;
    std::string out;
};

void run_train(const TrainArgs& a, const Common& c) {
    const auto data = io::read_vectors(a.input);
    TrainOptions opt;
    opt.num_subspaces = a.m;
    opt.num_codewords = a.k;
    opt.iterations = a.iterations;
    opt.seed = c.seed;
    opt.max_points = a.max_points;
    TrainReport report;
    const auto codebook = train_pq(data, opt, &report);
    io::save_codebook(a.out, codebook);
    std::cout << "trained d=" << codebook.dim() << " M=" << codebook.num_subspaces() << " K=" << codebook.num_codewords()
              << " on " << data.size() << " vectors\n";
    for (std::size_t m = 0; m < report.objective.size(); ++m) {
        const auto& obj = report.objective[m];
        std::cout << "subspace " << m << " iterations=" << obj.size()
                  << " objective=" << (obj.empty() ? 0.0 : obj.back()) << "\n";
    }
}

struct EncodeArgs {
    std::string codebook;
    std::string input;
    std::string out;
};

void run_encode(const EncodeArgs& a, const Common& c) {
    const auto codebook = io::load_codebook(a.codebook);
    const auto data = io::read_vectors(a.input);
    if (data.dim() != codebook.dim()) {
        throw Error(ErrorKind::DimensionError, "input dim " + std::to_string(data.dim()) + " != codebook dim " +
                                                   std::to_string(codebook.dim()));
    }
    data.check_finite();
    const std::size_t m = codebook.num_subspaces();
    std::vector<Chunk> codes(data.size() * m);
    parallel_ranges(data.size(), c.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            encode(codebook, data.row(i), std::span<Chunk>(codes.data() + i * m, m));
        }
    });
    std::vector<VectorId> ids(data.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ids[i] = static_cast<VectorId>(i);
    }
    EncodedDataset ds(m, codebook.num_codewords(), std::move(codes), std::move(ids));
    io::save_codes(a.out, ds);
    std::cout << "encoded " << ds.size() << " vectors to " << a.out << "\n";
}

struct BuildArgs {
    std::string codes;
    std::string order = "original";
    std::size_t trees = 1;
    std::string out;
};

ChunkOrder make_order(const std::string& mode, std::size_t m, std::uint64_t seed) {
    if (mode == "original") {
        return ChunkOrder::original(m);
    }
    if (mode == "random") {
        return ChunkOrder::randomized(m, seed);
    }
    throw Error(ErrorKind::ConfigError, "order must be original or random, got " + mode);
}

void run_build(const BuildArgs& a, const Common& c) {
    const auto ds = io::load_codes(a.codes);
    const auto order = make_order(a.order, ds.num_chunks(), c.seed);
    const auto start = std::chrono::steady_clock::now();
    const auto forest = build_forest(ds, order, ForestConfig::even(ds.num_chunks(), a.trees));
    const double took = ms_since(start);
    io::save_forest(a.out, forest);
    std::cout << "built " << forest.num_trees() << " tree(s) over " << forest.num_vectors() << " codes in "
              << std::fixed << std::setprecision(1) << took << " ms, " << forest.memory_bytes() << " bytes\n";
    if (ForestConfig::even(ds.num_chunks(), a.trees).has_short_ranges()) {
        std::cout << "note: some trees cover fewer than 4 layers\n";
    }
}

struct StatsArgs {
    std::string tree;
};

void run_stats(const StatsArgs& a, const Common&) {
    const auto forest = io::load_forest(a.tree);
    std::cout << "N=" << forest.num_vectors() << " M=" << forest.num_layers() << " K=" << forest.num_codewords()
              << " T=" << forest.num_trees() << "\n";
    const auto all = forest.tree_stats();
    bool ok = true;
    for (std::size_t t = 0; t < all.size(); ++t) {
        const auto& s = all[t];
        const auto& tree = forest.trees()[t];
        const bool match = s.memory_bytes == s.formula_bytes();
        ok = ok && match;
        std::cout << "tree " << t << " layers=[" << tree.layer_offset() << "," << tree.layer_offset() + tree.layer_count()
                  << ") L1=" << s.internal_nodes << " L2=" << s.leaf_nodes << " P=" << std::setprecision(4)
                  << s.avg_postfix << " N'=" << s.node_count << " memory_bytes=" << s.memory_bytes
                  << " formula_bytes=" << s.formula_bytes() << " formula_check=" << (match ? "ok" : "MISMATCH")
                  << "\n";
    }
    const std::size_t flat = forest.num_vectors() * (forest.num_layers() + 4);
    std::cout << "total memory_bytes=" << forest.memory_bytes() << " flat_bytes=" << flat << "\n";
    if (!ok) {
        throw Error(ErrorKind::CorruptBuffer, "memory formula check failed");
    }
}

struct QueryArgs {
    std::string tree;
    std::string codebook;
    std::string queries;
    std::size_t k = 10;
    std::string out;
};

void run_query(const QueryArgs& a, const Common& c) {
    const auto forest = io::load_forest(a.tree);
    const auto codebook = io::load_codebook(a.codebook);
    const auto queries = io::read_vectors(a.queries);
    if (codebook.num_subspaces() != forest.num_layers() || codebook.num_codewords() != forest.num_codewords()) {
        throw Error(ErrorKind::ConfigError, "codebook does not match the tree");
    }
    if (queries.dim() != codebook.dim()) {
        throw Error(ErrorKind::DimensionError, "query dim " + std::to_string(queries.dim()) + " != codebook dim " +
                                                   std::to_string(codebook.dim()));
    }
    if (a.k == 0) {
        throw Error(ErrorKind::ConfigError, "k must be at least 1");
    }
    queries.check_finite();
    const std::size_t k = std::min(a.k, forest.num_vectors());
    std::vector<std::vector<std::int32_t>> ids(queries.size());
    std::vector<float> dist_values(queries.size() * k);
    const auto start = std::chrono::steady_clock::now();
    parallel_ranges(queries.size(), c.threads, [&](std::size_t lo, std::size_t hi) {
        ForestScanner scanner(forest);
        const auto& slots = scanner.slot_ids();
        std::vector<float> out(slots.size());
        for (std::size_t q = lo; q < hi; ++q) {
            scanner.slot_distances(build_distance_table(codebook, queries.row(q)), out);
            TopK top(k);
            for (std::size_t j = 0; j < slots.size(); ++j) {
                top.push(slots[j], out[j]);
            }
            const auto best = top.take();
            for (std::size_t r = 0; r < best.size(); ++r) {
                ids[q].push_back(static_cast<std::int32_t>(best[r].id));
                dist_values[q * k + r] = best[r].distance;
            }
        }
    });
    const double took = ms_since(start);
    io::write_ivecs(with_extension(a.out, ".ivecs"), ids);
    io::write_fvecs(with_extension(a.out, ".fvecs"), VectorSet(k, std::move(dist_values)));
    std::cout << "answered " << queries.size() << " queries, k=" << k << ", " << std::fixed << std::setprecision(3)
              << (queries.empty() ? 0.0 : took / static_cast<double>(queries.size())) << " ms/query; wrote "
              << with_extension(a.out, ".ivecs").string() << " and " << with_extension(a.out, ".fvecs").string()
              << "\n";
}

struct BenchArgs {
    std::string codes;
    std::string codebook;
    std::string queries;
    std::size_t repetitions = 10;
    std::size_t trees = 2;
    std::size_t max_queries = 10;
    std::string order = "original";
    std::string methods;
    std::string format = "text";
};

void run_bench(const BenchArgs& a, const Common& c) {
    const auto ds = io::load_codes(a.codes);
    const auto codebook = io::load_codebook(a.codebook);
    auto queries = io::read_vectors(a.queries);
    if (queries.dim() != codebook.dim()) {
        throw Error(ErrorKind::DimensionError, "query dim does not match the codebook");
    }
    if (a.max_queries != 0 && queries.size() > a.max_queries) {
        const auto first = queries.row(0).data();
        queries = VectorSet(queries.dim(), std::vector<float>(first, first + a.max_queries * queries.dim()));
    }
    bench::BenchOptions opt;
    opt.repetitions = a.repetitions;
    opt.forest_trees = a.trees;
    opt.threads = c.threads;
    opt.order = make_order(a.order, ds.num_chunks(), c.seed);
    if (!a.methods.empty()) {
        opt.methods.clear();
        std::size_t pos = 0;
        while (pos <= a.methods.size()) {
            const auto comma = std::min(a.methods.find(',', pos), a.methods.size());
            opt.methods.push_back(bench::method_from_string(std::string_view(a.methods).substr(pos, comma - pos)));
            pos = comma + 1;
        }
    }
    const auto report = bench::bench_scan(ds, codebook, queries, opt, fs::path(a.codes).filename().string());
    if (a.format == "records") {
        std::cout << bench::format_records(report);
    } else if (a.format == "text") {
        std::cout << bench::format_text(report);
    } else {
        throw Error(ErrorKind::ConfigError, "format must be text or records");
    }
}

struct IvfBuildArgs {
    std::string input;
    std::size_t kprime = 256;
    std::size_t m = 8;
    std::size_t k = 256;
    std::size_t trees = 1;
    int iterations = 20;
    std::string out;
};

void run_ivf_build(const IvfBuildArgs& a, const Common& c) {
    const auto data = io::read_vectors(a.input);
    ivf::IvfParams p;
    p.coarse_centroids = a.kprime;
    p.num_subspaces = a.m;
    p.num_codewords = a.k;
    p.trees_per_list = a.trees;
    p.iterations = a.iterations;
    p.seed = c.seed;
    const auto start = std::chrono::steady_clock::now();
    const auto index = ivf::build_ivf(data, p);
    const double took = ms_since(start);
    ivf::save_index(a.out, index);
    std::size_t empty = 0;
    std::size_t largest = 0;
    for (const auto& list : index.lists) {
        empty += list.ids.empty() ? 1 : 0;
        largest = std::max(largest, list.ids.size());
    }
    std::cout << "built index over " << index.num_vectors << " vectors, K'=" << index.lists.size()
              << " (empty lists " << empty << ", largest " << largest << ") in " << std::fixed
              << std::setprecision(1) << took << " ms; wrote " << a.out << "\n";
}

struct IvfSearchArgs {
    std::string index;
    std::string queries;
    std::size_t w = 8;
    std::size_t k = 100;
    std::string ground_truth;
    std::string method = "tree";
    std::string out;
    bool report = false;
};

void run_ivf_search(const IvfSearchArgs& a, const Common& c) {
    const auto index = ivf::load_index(a.index);
    const auto queries = io::read_vectors(a.queries);
    if (queries.dim() != index.dim()) {
        throw Error(ErrorKind::DimensionError, "query dim does not match the index");
    }
    queries.check_finite();
    ivf::ScanMethod method;
    if (a.method == "tree") {
        method = ivf::ScanMethod::Tree;
    } else if (a.method == "adc") {
        method = ivf::ScanMethod::Adc;
    } else {
        throw Error(ErrorKind::ConfigError, "method must be tree or adc");
    }
    std::vector<ivf::QueryResult> results(queries.size());
    std::vector<ivf::SearchTiming> timing(std::max<std::size_t>(c.threads, 1));
    const auto start = std::chrono::steady_clock::now();
    const std::size_t threads = std::clamp<std::size_t>(c.threads, 1, std::max<std::size_t>(queries.size(), 1));
    parallel_ranges(queries.size(), threads, [&](std::size_t lo, std::size_t hi) {
        const std::size_t slot = queries.size() == 0 ? 0 : lo * threads / queries.size();
        for (std::size_t q = lo; q < hi; ++q) {
            ivf::SearchTiming t;
            results[q] = ivf::ivf_search(index, queries.row(q), a.w, a.k, method, &t);
            timing[std::min(slot, timing.size() - 1)] += t;
        }
    });
    const double wall = ms_since(start);
    ivf::SearchTiming total;
    for (const auto& t : timing) {
        total += t;
    }
    if (!a.out.empty()) {
        std::vector<std::vector<std::int32_t>> ids(results.size());
        const std::size_t width = std::max<std::size_t>(a.k, 1);
        std::vector<float> dist_values(results.size() * width, std::numeric_limits<float>::infinity());
        for (std::size_t q = 0; q < results.size(); ++q) {
            for (std::size_t r = 0; r < results[q].size(); ++r) {
                ids[q].push_back(static_cast<std::int32_t>(results[q][r].id));
                dist_values[q * width + r] = results[q][r].distance;
            }
            ids[q].resize(a.k, -1);
        }
        io::write_ivecs(with_extension(a.out, ".ivecs"), ids);
        io::write_fvecs(with_extension(a.out, ".fvecs"), VectorSet(width, std::move(dist_values)));
    }
    const double nq = std::max<double>(1.0, static_cast<double>(queries.size()));
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "queries=" << queries.size() << " w=" << a.w << " k=" << a.k << " method=" << a.method << "\n";
    if (!a.ground_truth.empty()) {
        const auto truth = io::read_ivecs(a.ground_truth);
        if (truth.size() < results.size()) {
            throw Error(ErrorKind::MalformedFile, "ground truth has " + std::to_string(truth.size()) +
                                                      " rows for " + std::to_string(results.size()) + " queries");
        }
        for (std::size_t r : {1, 10, 100}) {
            std::cout << "recall@" << r << "=" << ivf::recall_at(results, truth, r) << "\n";
        }
    }
    if (a.report) {
        std::cout << "mean_query_ms=" << wall / nq << "\n";
        std::cout << "phase.coarse_ms=" << total.coarse_ms / nq << "\n";
        std::cout << "phase.table_ms=" << total.table_ms / nq << "\n";
        std::cout << "phase.traversal_ms=" << total.traversal_ms / nq << "\n";
        std::cout << "phase.merge_ms=" << total.merge_ms / nq << "\n";
    }
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::string kind_slug(ErrorKind kind) {
    std::string s(to_string(kind));
    std::replace(s.begin(), s.end(), ' ', '_');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"E-Tree product-quantization toolkit"};
    app.require_subcommand(1);
    Common common;

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "generate clustered synthetic vectors");
    gen_cmd->add_option("--n", gen.n, "number of vectors")->capture_default_str();
    gen_cmd->add_option("--dim", gen.dim, "dimension")->capture_default_str();
    gen_cmd->add_option("--clusters", gen.clusters, "cluster count")->capture_default_str();
    gen_cmd->add_option("--stddev", gen.stddev, "per-dimension noise")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output .fvecs")->required();
    add_common(gen_cmd, common);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train a PQ codebook");
    train_cmd->add_option("--input", train.input, "training vectors (.fvecs/.bvecs/.ivecs)")->required();
    train_cmd->add_option("--M", train.m, "subspaces")->capture_default_str();
    train_cmd->add_option("--K", train.k, "codewords per subspace")->capture_default_str();
    train_cmd->add_option("--iterations", train.iterations, "k-means iterations")->capture_default_str();
    train_cmd->add_option("--max-points", train.max_points, "training sample size, 0 for all")->capture_default_str();
    train_cmd->add_option("--out", train.out, "codebook file")->required();
    add_common(train_cmd, common);

    EncodeArgs enc;
    auto* enc_cmd = app.add_subcommand("encode", "encode vectors with a codebook");
    enc_cmd->add_option("--codebook", enc.codebook, "codebook file")->required();
    enc_cmd->add_option("--input", enc.input, "vectors")->required();
    enc_cmd->add_option("--out", enc.out, "codes file")->required();
    add_common(enc_cmd, common);

    BuildArgs build;
    auto* build_cmd = app.add_subcommand("build-tree", "build an E-Tree or E-Forest");
    build_cmd->add_option("--codes", build.codes, "codes file")->required();
    build_cmd->add_option("--order", build.order, "original|random")->capture_default_str();
    build_cmd->add_option("--trees", build.trees, "number of trees")->capture_default_str()->check(CLI::PositiveNumber);
    build_cmd->add_option("--out", build.out, "tree file")->required();
    add_common(build_cmd, common);

    StatsArgs st;
    auto* stats_cmd = app.add_subcommand("stats", "print tree statistics");
    stats_cmd->add_option("--tree", st.tree, "tree file")->required();
    add_common(stats_cmd, common);

    QueryArgs query;
    auto* query_cmd = app.add_subcommand("query", "top-k search over a tree");
    query_cmd->add_option("--tree", query.tree, "tree file")->required();
    query_cmd->add_option("--codebook", query.codebook, "codebook file")->required();
    query_cmd->add_option("--queries", query.queries, "query vectors")->required();
    query_cmd->add_option("--k", query.k, "neighbours per query")->capture_default_str();
    query_cmd->add_option("--out", query.out, "output prefix; writes <out>.ivecs ids and <out>.fvecs distances")
        ->required();
    add_common(query_cmd, common);

    BenchArgs bench_args;
    auto* bench_cmd = app.add_subcommand("bench", "time ADC against E-Tree and E-Forest scans");
    bench_cmd->add_option("--codes", bench_args.codes, "codes file")->required();
    bench_cmd->add_option("--codebook", bench_args.codebook, "codebook file")->required();
    bench_cmd->add_option("--queries", bench_args.queries, "query vectors")->required();
    bench_cmd->add_option("--repetitions", bench_args.repetitions, "timed runs")->capture_default_str();
    bench_cmd->add_option("--trees", bench_args.trees, "forest size")->capture_default_str();
    bench_cmd->add_option("--max-queries", bench_args.max_queries, "queries used, 0 for all")->capture_default_str();
    bench_cmd->add_option("--order", bench_args.order, "original|random")->capture_default_str();
    bench_cmd->add_option("--methods", bench_args.methods,
                          "comma list of adc,etree,eforest,etree-slots,eforest-slots");
    bench_cmd->add_option("--format", bench_args.format, "text|records")->capture_default_str();
    add_common(bench_cmd, common);

    auto* ivf_cmd = app.add_subcommand("ivf", "inverted-file index");
    ivf_cmd->require_subcommand(1);
    IvfBuildArgs ib;
    auto* ib_cmd = ivf_cmd->add_subcommand("build", "build an IVF index");
    ib_cmd->add_option("--input", ib.input, "vectors")->required();
    ib_cmd->add_option("--kprime", ib.kprime, "coarse centroids")->capture_default_str();
    ib_cmd->add_option("--M", ib.m, "subspaces")->capture_default_str();
    ib_cmd->add_option("--K", ib.k, "codewords")->capture_default_str();
    ib_cmd->add_option("--trees", ib.trees, "trees per list")->capture_default_str();
    ib_cmd->add_option("--iterations", ib.iterations, "k-means iterations")->capture_default_str();
    ib_cmd->add_option("--out", ib.out, "index directory")->required();
    add_common(ib_cmd, common);

    IvfSearchArgs is;
    auto* is_cmd = ivf_cmd->add_subcommand("search", "search an IVF index");
    is_cmd->add_option("--index", is.index, "index directory")->required();
    is_cmd->add_option("--queries", is.queries, "query vectors")->required();
    is_cmd->add_option("--w", is.w, "lists probed")->capture_default_str();
    is_cmd->add_option("--k", is.k, "neighbours per query")->capture_default_str();
    is_cmd->add_option("--ground-truth", is.ground_truth, "ivecs ground truth");
    is_cmd->add_option("--method", is.method, "tree|adc")->capture_default_str();
    is_cmd->add_option("--out", is.out, "optional output prefix");
    is_cmd->add_flag("--report", is.report, "print timing report");
    add_common(is_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (*gen_cmd) run_gen(gen, common);
        else if (*train_cmd) run_train(train, common);
        else if (*enc_cmd) run_encode(enc, common);
        else if (*build_cmd) run_build(build, common);
        else if (*stats_cmd) run_stats(st, common);
        else if (*query_cmd) run_query(query, common);
        else if (*bench_cmd) run_bench(bench_args, common);
        else if (*ib_cmd) run_ivf_build(ib, common);
        else if (*is_cmd) run_ivf_search(is, common);
    } catch (const Error& e) {
        std::cerr << "error: " << kind_slug(e.kind()) << ": " << one_line(e.detail()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
