#include "etree/bench.hpp"

#include "etree/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

namespace etree::bench {

void SyntheticSpec::validate() const {
    if (num_vectors == 0 || dim == 0 || cluster_count == 0) {
        throw Error(ErrorKind::ConfigError, "N, d and cluster_count must be >= 1");
    }
    if (!(cluster_stddev > 0.0) || !std::isfinite(cluster_stddev)) {
        throw Error(ErrorKind::ConfigError, "cluster_stddev must be positive");
    }
}

VectorSet gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<float> centers(spec.cluster_count * spec.dim);
    for (auto& c : centers) {
        c = static_cast<float>(unit(rng));
    }
    std::uniform_int_distribution<std::size_t> pick(0, spec.cluster_count - 1);
    std::normal_distribution<double> noise(0.0, spec.cluster_stddev);
    std::vector<float> values(spec.num_vectors * spec.dim);
    for (std::size_t i = 0; i < spec.num_vectors; ++i) {
        const std::size_t c = pick(rng);
        for (std::size_t j = 0; j < spec.dim; ++j) {
            values[i * spec.dim + j] = static_cast<float>(centers[c * spec.dim + j] + noise(rng));
        }
    }
    return VectorSet(spec.dim, std::move(values));
}

std::string_view to_string(Method m) noexcept {
    switch (m) {
        case Method::Adc: return "adc";
        case Method::ETree: return "etree";
        case Method::EForest: return "eforest";
        case Method::ETreeSlots: return "etree-slots";
        case Method::EForestSlots: return "eforest-slots";
    }
    return "unknown";
}

Method method_from_string(std::string_view name) {
    if (name == "adc") return Method::Adc;
    if (name == "etree") return Method::ETree;
    if (name == "eforest") return Method::EForest;
    if (name == "etree-slots") return Method::ETreeSlots;
    if (name == "eforest-slots") return Method::EForestSlots;
    throw Error(ErrorKind::ConfigError, "unknown method '" + std::string(name) + "'");
}

const MethodResult* BenchReport::find(Method m) const noexcept {
    for (const auto& r : methods) {
        if (r.method == m) {
            return &r;
        }
    }
    return nullptr;
}

double BenchReport::speedup(Method m) const {
    const auto* adc = find(Method::Adc);
    const auto* other = find(m);
    if (adc == nullptr || other == nullptr || other->median_ms <= 0.0) {
        return 0.0;
    }
    return adc->median_ms / other->median_ms;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void adc_scan_parallel(const DistanceTable& table, const EncodedDataset& ds, std::span<float> out,
                       std::size_t threads) {
    const std::size_t n = ds.size();
    const std::size_t m = ds.num_chunks();
    const std::size_t k = ds.num_codewords();
    const float* entries = table.entries().data();
    const Chunk* codes = ds.codes().data();
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = n * t / threads;
        const std::size_t hi = n * (t + 1) / threads;
        workers.emplace_back([=] {
            const Chunk* code = codes + lo * m;
            for (std::size_t i = lo; i < hi; ++i, code += m) {
                double sum = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    sum += entries[j * k + code[j]];
                }
                out[i] = static_cast<float>(sum);
            }
        });
    }
}

}  // namespace

BenchReport bench_scan(const EncodedDataset& ds, const Codebook& codebook, const VectorSet& queries,
                       const BenchOptions& options, std::string dataset) {
    if (queries.empty()) {
        throw Error(ErrorKind::ConfigError, "bench needs at least one query");
    }
    if (options.repetitions == 0) {
        throw Error(ErrorKind::ConfigError, "bench needs at least one repetition");
    }
    if (ds.empty()) {
        throw Error(ErrorKind::EmptyDataset, "bench needs a non-empty dataset");
    }
    if (codebook.num_subspaces() != ds.num_chunks() || codebook.num_codewords() != ds.num_codewords()) {
        throw Error(ErrorKind::ConfigError, "codebook does not match the codes");
    }
    const std::size_t n = ds.size();
    const std::size_t m = ds.num_chunks();
    const ChunkOrder order = options.order.value_or(ChunkOrder::original(m));

    BenchReport report;
    report.num_vectors = n;
    report.num_layers = m;
    report.num_codewords = ds.num_codewords();
    report.num_queries = queries.size();
    report.repetitions = options.repetitions;
    report.threads = options.threads;
    report.dataset = std::move(dataset);
    report.order = order.mode() == ChunkOrder::Mode::Original ? "original" : "randomized";

    auto has = [&](Method x) { return std::find(options.methods.begin(), options.methods.end(), x) != options.methods.end(); };

    EForest tree;
    EForest forest;
    const bool want_tree = has(Method::ETree) || has(Method::ETreeSlots);
    const bool want_forest = has(Method::EForest) || has(Method::EForestSlots);
    if (want_tree) {
        const auto start = Clock::now();
        tree = build_forest(ds, order, ForestConfig::even(m, 1));
        report.build_tree_ms = ms_since(start);
        report.etree_stats = tree.tree_stats();
    }
    if (want_forest) {
        const auto start = Clock::now();
        forest = build_forest(ds, order, ForestConfig::even(m, options.forest_trees));
        report.build_forest_ms = ms_since(start);
        report.eforest_stats = forest.tree_stats();
        if (ForestConfig::even(m, options.forest_trees).has_short_ranges()) {
            report.notes.push_back("forest trees cover fewer than 4 layers");
        }
    }

    std::vector<DistanceTable> tables;
    tables.reserve(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        tables.push_back(build_distance_table(codebook, queries.row(q)));
    }

    // Slot-indexed outputs; ADC is position-indexed, so compare through ids.
    std::size_t slots = 0;
    for (auto id : ds.ids()) {
        slots = std::max<std::size_t>(slots, std::size_t{id} + 1);
    }
    std::vector<float> reference(n);
    std::vector<float> out(std::max(slots, n));
    ForestScanner tree_scan(tree);
    ForestScanner forest_scan(forest);
    std::vector<std::size_t> position(slots);
    for (std::size_t i = 0; i < n; ++i) {
        position[ds.id(i)] = i;
    }
    std::span<const VectorId> tree_slots;
    std::span<const VectorId> forest_slots;
    if (has(Method::ETreeSlots)) {
        tree_slots = tree_scan.slot_ids();
    }
    if (has(Method::EForestSlots)) {
        forest_slots = forest_scan.slot_ids();
    }

    auto run = [&](Method method, const DistanceTable& table) -> std::uint64_t {
        switch (method) {
            case Method::Adc: adc_scan(table, ds, std::span<float>(out.data(), n)); return n * m;
            case Method::ETree: return tree_scan.distances_counted(table, out);
            case Method::EForest: return forest_scan.distances_counted(table, out);
            case Method::ETreeSlots: tree_scan.slot_distances(table, out); return 0;
            case Method::EForestSlots: forest_scan.slot_distances(table, out); return 0;
        }
        return 0;
    };

    for (Method method : options.methods) {
        MethodResult r;
        r.method = method;
        for (std::size_t q = 0; q < tables.size(); ++q) {
            adc_scan(tables[q], ds, reference);
            r.lookups = run(method, tables[q]);
            const auto slot_ids = method == Method::ETreeSlots ? tree_slots : forest_slots;
            const bool by_slot = method == Method::ETreeSlots || method == Method::EForestSlots;
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t i = by_slot ? position[slot_ids[j]] : j;
                const float got = method == Method::Adc ? out[i] : by_slot ? out[j] : out[ds.id(i)];
                const double tol = std::max(options.abs_tolerance, options.rel_tolerance * std::abs(reference[i]));
                if (!(std::abs(static_cast<double>(got) - reference[i]) <= tol)) {
                    std::ostringstream msg;
                    msg << to_string(method) << " disagrees with adc on query " << q << " record " << i << ": " << got
                        << " vs " << reference[i];
                    throw Error(ErrorKind::EquivalenceFailure, msg.str());
                }
            }
        }
        if (method == Method::ETreeSlots || method == Method::EForestSlots) {
            // Same records visited as the id-indexed scan.
            std::vector<float> scratch(out.size());
            r.lookups = (method == Method::ETreeSlots ? tree_scan : forest_scan).distances_counted(tables[0], scratch);
        }
        switch (method) {
            case Method::Adc: r.memory_bytes = n * (m + 4); break;
            case Method::ETree: r.memory_bytes = tree.memory_bytes(); break;
            case Method::EForest: r.memory_bytes = forest.memory_bytes(); break;
            case Method::ETreeSlots:
                r.memory_bytes = tree.memory_bytes();
                r.aux_bytes = tree_scan.slot_memory_bytes();
                break;
            case Method::EForestSlots:
                r.memory_bytes = forest.memory_bytes();
                r.aux_bytes = forest_scan.slot_memory_bytes();
                break;
        }
        report.methods.push_back(r);
    }

    // Warm-up, then interleave methods per repetition so drift hits all of them alike.
    std::vector<std::vector<double>> samples(options.methods.size());
    for (std::size_t rep = 0; rep <= options.repetitions; ++rep) {
        for (std::size_t j = 0; j < options.methods.size(); ++j) {
            const auto start = Clock::now();
            for (const auto& table : tables) {
                run(options.methods[j], table);
            }
            const double per_scan = ms_since(start) / static_cast<double>(tables.size());
            if (rep > 0) {
                samples[j].push_back(per_scan);
            }
        }
    }
    for (std::size_t j = 0; j < options.methods.size(); ++j) {
        auto& r = report.methods[j];
        r.median_ms = median(samples[j]);
        r.min_ms = *std::min_element(samples[j].begin(), samples[j].end());
        r.max_ms = *std::max_element(samples[j].begin(), samples[j].end());
    }

    if (options.threads > 1) {
        for (std::size_t j = 0; j < options.methods.size(); ++j) {
            const Method method = options.methods[j];
            if (method == Method::ETreeSlots || method == Method::EForestSlots) {
                continue;
            }
            std::vector<double> times;
            for (std::size_t rep = 0; rep <= options.repetitions; ++rep) {
                const auto start = Clock::now();
                for (const auto& table : tables) {
                    if (method == Method::Adc) {
                        adc_scan_parallel(table, ds, std::span<float>(out.data(), n), options.threads);
                    } else {
                        const EForest& f = method == Method::ETree ? tree : forest;
                        // Trees are independent; each one is split across the workers.
                        std::vector<float> partial(f.num_trees() > 1 ? out.size() : 0);
                        for (std::size_t t = 0; t < f.num_trees(); ++t) {
                            traverse_distances_parallel(f.trees()[t], table, t == 0 ? std::span<float>(out) : partial,
                                                        options.threads);
                            if (t > 0) {
                                for (std::size_t i = 0; i < out.size(); ++i) {
                                    out[i] += partial[i];
                                }
                            }
                        }
                    }
                }
                if (rep > 0) {
                    times.push_back(ms_since(start) / static_cast<double>(tables.size()));
                }
            }
            report.methods[j].multi_worker_median_ms = median(times);
        }
    }
    return report;
}

std::string format_text(const BenchReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "dataset " << report.dataset << ": N=" << report.num_vectors << " M=" << report.num_layers
       << " K=" << report.num_codewords << " queries=" << report.num_queries << " repetitions=" << report.repetitions
       << " order=" << report.order << "\n";
    const std::size_t flat = report.num_vectors * (report.num_layers + 4);
    for (const auto& r : report.methods) {
        os << "  " << std::left << std::setw(8) << to_string(r.method) << std::right << " median " << std::setw(9)
           << r.median_ms << " ms  (min " << r.min_ms << ", max " << r.max_ms << ")  lookups " << r.lookups
           << "  memory " << r.memory_bytes << " B";
        if (r.aux_bytes != 0) {
            os << " (+" << r.aux_bytes << " B slot maps)";
        }
        if (r.method != Method::Adc) {
            os << "  speedup " << std::setprecision(2) << report.speedup(r.method) << "x  memory "
               << std::showpos << 100.0 * (static_cast<double>(r.memory_bytes) / static_cast<double>(flat) - 1.0)
               << std::noshowpos << "%" << std::setprecision(3);
        }
        if (r.multi_worker_median_ms) {
            os << "  [" << report.threads << " workers: " << *r.multi_worker_median_ms << " ms]";
        }
        os << "\n";
    }
    auto print_stats = [&](const char* label, const std::vector<TreeStats>& all) {
        for (std::size_t t = 0; t < all.size(); ++t) {
            const auto& s = all[t];
            os << "  " << label << "[" << t << "] L1=" << s.internal_nodes << " L2=" << s.leaf_nodes
               << " P=" << std::setprecision(4) << s.avg_postfix << std::setprecision(3) << " N'=" << s.node_count
               << " memory=" << s.memory_bytes << " formula=" << s.formula_bytes() << "\n";
        }
    };
    print_stats("etree", report.etree_stats);
    print_stats("eforest", report.eforest_stats);
    os << "  timings are hardware dependent; reference points on SIFT1M (M=8): adc 2.678 ms, etree 1.760 ms, "
          "eforest 1.265 ms. Memory savings depend on how many codes share prefixes.\n";
    for (const auto& note : report.notes) {
        os << "  note: " << note << "\n";
    }
    return os.str();
}

std::string format_records(const BenchReport& report) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "dataset=" << report.dataset << "\n";
    os << "n=" << report.num_vectors << "\nm=" << report.num_layers << "\nk=" << report.num_codewords << "\n";
    os << "queries=" << report.num_queries << "\nrepetitions=" << report.repetitions << "\n";
    os << "order=" << report.order << "\nthreads=" << report.threads << "\n";
    os << "build_tree_ms=" << report.build_tree_ms << "\nbuild_forest_ms=" << report.build_forest_ms << "\n";
    for (const auto& r : report.methods) {
        const auto name = std::string(to_string(r.method));
        os << name << ".median_ms=" << r.median_ms << "\n";
        os << name << ".min_ms=" << r.min_ms << "\n";
        os << name << ".max_ms=" << r.max_ms << "\n";
        os << name << ".lookups=" << r.lookups << "\n";
        os << name << ".memory_bytes=" << r.memory_bytes << "\n";
        os << name << ".aux_bytes=" << r.aux_bytes << "\n";
        if (r.method != Method::Adc) {
            os << name << ".speedup=" << report.speedup(r.method) << "\n";
        }
        if (r.multi_worker_median_ms) {
            os << name << ".multi_worker_median_ms=" << *r.multi_worker_median_ms << "\n";
        }
    }
    auto emit = [&](const char* label, const std::vector<TreeStats>& all) {
        for (std::size_t t = 0; t < all.size(); ++t) {
            const auto& s = all[t];
            const std::string p = std::string(label) + "." + std::to_string(t) + ".";
            os << p << "l1=" << s.internal_nodes << "\n" << p << "l2=" << s.leaf_nodes << "\n";
            os << p << "total_postfix=" << s.total_postfix << "\n" << p << "avg_postfix=" << s.avg_postfix << "\n";
            os << p << "memory_bytes=" << s.memory_bytes << "\n" << p << "formula_bytes=" << s.formula_bytes() << "\n";
        }
    };
    emit("etree", report.etree_stats);
    emit("eforest", report.eforest_stats);
    return os.str();
}

}  // namespace etree::bench
