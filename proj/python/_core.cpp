#include "etree/eforest.hpp"
#include "etree/error.hpp"
#include "etree/io.hpp"
#include "etree/ivf.hpp"
#include "etree/quantizer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <optional>

namespace py = pybind11;
using namespace etree;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using IdArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

VectorSet to_vectors(const FloatArray& a) {
    if (a.ndim() != 2) {
        throw Error(ErrorKind::DimensionError, "expected a 2-d array of vectors");
    }
    const auto n = static_cast<std::size_t>(a.shape(0));
    const auto d = static_cast<std::size_t>(a.shape(1));
    return VectorSet(d, std::vector<float>(a.data(), a.data() + n * d));
}

std::span<const float> to_vector(const FloatArray& a) {
    if (a.ndim() != 1) {
        throw Error(ErrorKind::DimensionError, "expected a 1-d query vector");
    }
    return {a.data(), static_cast<std::size_t>(a.shape(0))};
}

py::array_t<float> from_vectors(const VectorSet& v) {
    py::array_t<float> out({v.size(), v.dim()});
    std::memcpy(out.mutable_data(), v.values().data(), v.values().size() * sizeof(float));
    return out;
}

py::array_t<float> from_floats(const std::vector<float>& v) {
    py::array_t<float> out(v.size());
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(float));
    return out;
}

EncodedDataset to_codes(const ByteArray& codes, std::size_t k, const std::optional<IdArray>& ids) {
    if (codes.ndim() != 2) {
        throw Error(ErrorKind::DimensionError, "expected a 2-d array of codes");
    }
    const auto n = static_cast<std::size_t>(codes.shape(0));
    const auto m = static_cast<std::size_t>(codes.shape(1));
    std::vector<VectorId> id_values(n);
    if (ids) {
        if (ids->ndim() != 1 || static_cast<std::size_t>(ids->shape(0)) != n) {
            throw Error(ErrorKind::DimensionError, "ids must be 1-d with one entry per code");
        }
        std::memcpy(id_values.data(), ids->data(), n * sizeof(VectorId));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            id_values[i] = static_cast<VectorId>(i);
        }
    }
    return EncodedDataset(m, k, std::vector<Chunk>(codes.data(), codes.data() + n * m), std::move(id_values));
}

py::array_t<std::uint8_t> from_codes(const EncodedDataset& ds) {
    py::array_t<std::uint8_t> out({ds.size(), ds.num_chunks()});
    std::memcpy(out.mutable_data(), ds.codes().data(), ds.codes().size());
    return out;
}

py::array_t<std::uint32_t> from_ids(const std::vector<VectorId>& ids) {
    py::array_t<std::uint32_t> out(ids.size());
    std::memcpy(out.mutable_data(), ids.data(), ids.size() * sizeof(VectorId));
    return out;
}

DistanceTable to_table(const FloatArray& t) {
    if (t.ndim() != 2) {
        throw Error(ErrorKind::DimensionError, "expected an M x K distance table");
    }
    const auto m = static_cast<std::size_t>(t.shape(0));
    const auto k = static_cast<std::size_t>(t.shape(1));
    return DistanceTable(m, k, std::vector<float>(t.data(), t.data() + m * k));
}

py::dict stats_dict(const TreeStats& s) {
    py::dict d;
    d["internal_nodes"] = s.internal_nodes;
    d["leaf_nodes"] = s.leaf_nodes;
    d["total_postfix"] = s.total_postfix;
    d["avg_postfix"] = s.avg_postfix;
    d["node_count"] = s.node_count;
    d["memory_bytes"] = s.memory_bytes;
    d["formula_bytes"] = s.formula_bytes();
    d["lookup_count"] = s.lookup_count();
    return d;
}

ChunkOrder make_order(std::size_t m, const py::object& order, std::uint64_t seed) {
    if (order.is_none()) {
        return ChunkOrder::original(m);
    }
    if (py::isinstance<py::str>(order)) {
        const auto name = order.cast<std::string>();
        if (name == "original") {
            return ChunkOrder::original(m);
        }
        if (name == "random") {
            return ChunkOrder::randomized(m, seed);
        }
        throw Error(ErrorKind::ConfigError, "order must be 'original', 'random' or a permutation");
    }
    return ChunkOrder::from_permutation(order.cast<std::vector<std::uint32_t>>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Product quantization with encoding trees and forests";

    py::register_exception<Error>(m, "EtreeError", PyExc_RuntimeError);

    py::class_<Codebook>(m, "Codebook")
        .def(py::init([](const FloatArray& centroids) {
                 if (centroids.ndim() != 3) {
                     throw Error(ErrorKind::DimensionError, "centroids must have shape (M, K, d/M)");
                 }
                 const auto mm = static_cast<std::size_t>(centroids.shape(0));
                 const auto k = static_cast<std::size_t>(centroids.shape(1));
                 const auto sub = static_cast<std::size_t>(centroids.shape(2));
                 return Codebook(mm * sub, mm, k,
                                 std::vector<float>(centroids.data(), centroids.data() + mm * k * sub));
             }),
             py::arg("centroids"))
        .def_property_readonly("dim", &Codebook::dim)
        .def_property_readonly("num_subspaces", &Codebook::num_subspaces)
        .def_property_readonly("num_codewords", &Codebook::num_codewords)
        .def_property_readonly("centroids",
                               [](const Codebook& cb) {
                                   py::array_t<float> out({cb.num_subspaces(), cb.num_codewords(), cb.sub_dim()});
                                   std::memcpy(out.mutable_data(), cb.centroids().data(),
                                               cb.centroids().size() * sizeof(float));
                                   return out;
                               })
        .def("save", [](const Codebook& cb, const std::filesystem::path& p) { io::save_codebook(p, cb); })
        .def_static("load", &io::load_codebook)
        .def("__eq__", [](const Codebook& a, const Codebook& b) { return a == b; });

    m.def(
        "train_pq",
        [](const FloatArray& data, std::size_t M, std::size_t K, int iterations, std::uint64_t seed,
           std::size_t max_points) {
            TrainOptions opt;
            opt.num_subspaces = M;
            opt.num_codewords = K;
            opt.iterations = iterations;
            opt.seed = seed;
            opt.max_points = max_points;
            TrainReport report;
            auto cb = train_pq(to_vectors(data), opt, &report);
            return py::make_tuple(std::move(cb), report.objective);
        },
        py::arg("data"), py::arg("M") = 8, py::arg("K") = 256, py::arg("iterations") = 25, py::arg("seed") = 0,
        py::arg("max_points") = 0, "Returns (codebook, per-subspace objective traces).");

    m.def(
        "encode", [](const Codebook& cb, const FloatArray& data) { return from_codes(encode_all(cb, to_vectors(data))); },
        py::arg("codebook"), py::arg("data"));

    m.def(
        "decode",
        [](const Codebook& cb, const ByteArray& code) {
            return from_floats(decode(cb, {code.data(), static_cast<std::size_t>(code.size())}));
        },
        py::arg("codebook"), py::arg("code"));

    m.def(
        "distance_table",
        [](const Codebook& cb, const FloatArray& query) {
            const auto t = build_distance_table(cb, to_vector(query));
            py::array_t<float> out({t.num_subspaces(), t.num_codewords()});
            std::memcpy(out.mutable_data(), t.entries().data(), t.entries().size() * sizeof(float));
            return out;
        },
        py::arg("codebook"), py::arg("query"));

    m.def(
        "adc_scan",
        [](const FloatArray& table, const ByteArray& codes) {
            const auto t = to_table(table);
            return from_floats(adc_scan(t, to_codes(codes, t.num_codewords(), std::nullopt)));
        },
        py::arg("table"), py::arg("codes"), "Distances in row order.");

    py::class_<EForest>(m, "Forest")
        .def_static(
            "build",
            [](const ByteArray& codes, std::size_t K, std::optional<IdArray> ids, std::size_t trees,
               const py::object& order, std::uint64_t seed) {
                const auto ds = to_codes(codes, K, ids);
                const auto o = make_order(ds.num_chunks(), order, seed);
                return build_forest(ds, o, ForestConfig::even(ds.num_chunks(), trees));
            },
            py::arg("codes"), py::arg("K") = 256, py::arg("ids") = py::none(), py::arg("trees") = 1,
            py::arg("order") = py::none(), py::arg("seed") = 0)
        .def_property_readonly("num_trees", &EForest::num_trees)
        .def_property_readonly("num_vectors", &EForest::num_vectors)
        .def_property_readonly("memory_bytes", &EForest::memory_bytes)
        .def_property_readonly("order",
                               [](const EForest& f) { return f.chunk_order().permutation(); })
        .def("stats",
             [](const EForest& f) {
                 py::list out;
                 for (const auto& s : f.tree_stats()) {
                     out.append(stats_dict(s));
                 }
                 return out;
             })
        .def(
            "distances",
            [](const EForest& f, const FloatArray& table) { return from_floats(forest_distances(f, to_table(table))); },
            py::arg("table"), "Distances indexed by vector id.")
        .def("sorted_codes",
             [](const EForest& f) {
                 if (f.num_trees() != 1) {
                     throw Error(ErrorKind::ConfigError, "sorted_codes needs a single tree");
                 }
                 const auto ds = enumerate_lexicographic(f.trees()[0]);
                 return py::make_tuple(from_codes(ds), from_ids(ds.ids()));
             })
        .def("save", [](const EForest& f, const std::filesystem::path& p) { io::save_forest(p, f); })
        .def_static("load", &io::load_forest);

    m.def(
        "read_vectors", [](const std::filesystem::path& p) { return from_vectors(io::read_vectors(p)); },
        py::arg("path"));
    m.def(
        "write_fvecs", [](const std::filesystem::path& p, const FloatArray& data) { io::write_fvecs(p, to_vectors(data)); },
        py::arg("path"), py::arg("data"));
    m.def(
        "save_codes",
        [](const std::filesystem::path& p, const ByteArray& codes, std::size_t K, std::optional<IdArray> ids) {
            io::save_codes(p, to_codes(codes, K, ids));
        },
        py::arg("path"), py::arg("codes"), py::arg("K") = 256, py::arg("ids") = py::none());
    m.def(
        "load_codes",
        [](const std::filesystem::path& p) {
            const auto ds = io::load_codes(p);
            return py::make_tuple(from_codes(ds), from_ids(ds.ids()), ds.num_codewords());
        },
        py::arg("path"), "Returns (codes, ids, K).");

    py::class_<ivf::InvertedIndex>(m, "IvfIndex")
        .def_static(
            "build",
            [](const FloatArray& data, std::size_t kprime, std::size_t M, std::size_t K, std::size_t trees,
               int iterations, std::uint64_t seed) {
                ivf::IvfParams p;
                p.coarse_centroids = kprime;
                p.num_subspaces = M;
                p.num_codewords = K;
                p.trees_per_list = trees;
                p.iterations = iterations;
                p.seed = seed;
                return ivf::build_ivf(to_vectors(data), p);
            },
            py::arg("data"), py::arg("kprime") = 256, py::arg("M") = 8, py::arg("K") = 256, py::arg("trees") = 1,
            py::arg("iterations") = 20, py::arg("seed") = 0)
        .def_readonly("num_vectors", &ivf::InvertedIndex::num_vectors)
        .def_property_readonly("num_lists", [](const ivf::InvertedIndex& x) { return x.lists.size(); })
        .def(
            "search",
            [](const ivf::InvertedIndex& x, const FloatArray& query, std::size_t w, std::size_t k,
               const std::string& method) {
                ivf::ScanMethod sm;
                if (method == "tree") {
                    sm = ivf::ScanMethod::Tree;
                } else if (method == "adc") {
                    sm = ivf::ScanMethod::Adc;
                } else {
                    throw Error(ErrorKind::ConfigError, "method must be 'tree' or 'adc'");
                }
                const auto res = ivf::ivf_search(x, to_vector(query), w, k, sm);
                py::array_t<std::uint32_t> ids(res.size());
                py::array_t<float> dist(res.size());
                for (std::size_t i = 0; i < res.size(); ++i) {
                    ids.mutable_data()[i] = res[i].id;
                    dist.mutable_data()[i] = res[i].distance;
                }
                return py::make_tuple(ids, dist);
            },
            py::arg("query"), py::arg("w") = 8, py::arg("k") = 10, py::arg("method") = "tree",
            "Returns (ids, distances), ascending.")
        .def("save", [](const ivf::InvertedIndex& x, const std::filesystem::path& p) { ivf::save_index(p, x); })
        .def_static("load", &ivf::load_index);
}
