#include "etree/io.hpp"

#include "etree/error.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace etree::io {

namespace {

constexpr std::uint32_t kVersion = 1;

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    void bytes(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw Error(ErrorKind::MalformedFile, source_ + ": truncated " + what + " at byte " + std::to_string(offset_));
        }
        offset_ += n;
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        bytes(&v, sizeof v, what);
        return v;
    }
    std::uint64_t u64(const char* what) {
        std::uint64_t v;
        bytes(&v, sizeof v, what);
        return v;
    }
    void magic(const char (&expected)[5]) {
        std::array<char, 4> got{};
        bytes(got.data(), got.size(), "magic");
        if (std::memcmp(got.data(), expected, 4) != 0) {
            throw Error(ErrorKind::MalformedFile, source_ + ": bad magic, expected " + expected);
        }
        const auto version = u32("version");
        if (version != kVersion) {
            throw Error(ErrorKind::MalformedFile, source_ + ": unsupported version " + std::to_string(version));
        }
    }
    /// Bytes left in the stream; lets headers be checked before allocating.
    std::uint64_t remaining() {
        const auto here = in_.tellg();
        in_.seekg(0, std::ios::end);
        const auto end = in_.tellg();
        in_.seekg(here);
        return here < 0 || end < here ? 0 : static_cast<std::uint64_t>(end - here);
    }
    void need(std::uint64_t n, const char* what) {
        if (remaining() < n) {
            fail(std::string("truncated ") + what);
        }
    }
    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            offset_ = static_cast<std::size_t>(in_.tellg());
            fail("trailing bytes");
        }
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorKind::MalformedFile, source_ + ": " + what + " at byte " + std::to_string(offset_));
    }

private:
    std::istream& in_;
    std::string source_;
    std::size_t offset_ = 0;
};

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void bytes(const void* src, std::size_t n) { out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n)); }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void magic(const char (&m)[5]) {
        bytes(m, 4);
        u32(kVersion);
    }

private:
    std::ostream& out_;
};

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path.string());
    }
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) {
        throw Error(ErrorKind::IoError, "write failed for " + path.string());
    }
}

std::vector<char> slurp(const std::filesystem::path& path) {
    auto in = open_in(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t to_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFULL) {
        throw Error(ErrorKind::ConfigError, std::string(what) + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

// Walks the d-prefixed records of a *vecs file and hands each payload to `row`.
// Ragged files may mix lengths, including zero.
template <typename Row>
void for_each_vecs_record(const std::vector<char>& raw, std::size_t elem_size, const std::string& source, Row&& row,
                          bool ragged = false) {
    std::size_t pos = 0;
    std::int32_t dim = -1;
    while (pos < raw.size()) {
        if (raw.size() - pos < 4) {
            throw Error(ErrorKind::MalformedFile, source + ": truncated record header at byte " + std::to_string(pos));
        }
        std::int32_t d;
        std::memcpy(&d, raw.data() + pos, 4);
        if (ragged ? d < 0 : (d <= 0 || (dim >= 0 && d != dim))) {
            throw Error(ErrorKind::MalformedFile,
                        source + ": inconsistent dimension " + std::to_string(d) + " at byte " + std::to_string(pos));
        }
        dim = d;
        const std::size_t len = static_cast<std::size_t>(d) * elem_size;
        if (raw.size() - pos - 4 < len) {
            throw Error(ErrorKind::MalformedFile, source + ": truncated record at byte " + std::to_string(pos));
        }
        row(static_cast<std::size_t>(d), raw.data() + pos + 4, pos);
        pos += 4 + len;
    }
}

}  // namespace

VectorFormat format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".fvecs") return VectorFormat::Fvecs;
    if (ext == ".bvecs") return VectorFormat::Bvecs;
    if (ext == ".ivecs") return VectorFormat::Ivecs;
    throw Error(ErrorKind::ConfigError, "cannot infer vector format from " + path.string());
}

VectorSet read_vectors(const std::filesystem::path& path, VectorFormat format) {
    const auto raw = slurp(path);
    const std::string source = path.string();
    const std::size_t elem = format == VectorFormat::Bvecs ? 1 : 4;
    VectorSet out;
    std::vector<float> values;
    std::size_t dim = 0;
    for_each_vecs_record(raw, elem, source, [&](std::size_t d, const char* payload, std::size_t offset) {
        dim = d;
        for (std::size_t j = 0; j < d; ++j) {
            switch (format) {
                case VectorFormat::Fvecs: {
                    float v;
                    std::memcpy(&v, payload + 4 * j, 4);
                    values.push_back(v);
                    break;
                }
                case VectorFormat::Bvecs:
                    values.push_back(static_cast<float>(static_cast<unsigned char>(payload[j])));
                    break;
                case VectorFormat::Ivecs: {
                    std::int32_t v;
                    std::memcpy(&v, payload + 4 * j, 4);
                    const auto f = static_cast<float>(v);
                    if (static_cast<std::int64_t>(f) != v) {
                        throw Error(ErrorKind::MalformedFile, source + ": ivecs value " + std::to_string(v) +
                                                                  " not exactly representable, record at byte " +
                                                                  std::to_string(offset));
                    }
                    values.push_back(f);
                    break;
                }
            }
        }
    });
    return dim == 0 ? VectorSet() : VectorSet(dim, std::move(values));
}

VectorSet read_vectors(const std::filesystem::path& path) { return read_vectors(path, format_from_path(path)); }

std::vector<std::vector<std::int32_t>> read_ivecs(const std::filesystem::path& path) {
    const auto raw = slurp(path);
    std::vector<std::vector<std::int32_t>> rows;
    for_each_vecs_record(raw, 4, path.string(), [&](std::size_t d, const char* payload, std::size_t) {
        auto& r = rows.emplace_back(d);
        std::memcpy(r.data(), payload, 4 * d);
    }, true);
    return rows;
}

void write_fvecs(const std::filesystem::path& path, const VectorSet& data) {
    auto out = open_out(path);
    Writer w(out);
    for (std::size_t i = 0; i < data.size(); ++i) {
        w.u32(to_u32(data.dim(), "dimension"));
        w.bytes(data.row(i).data(), data.dim() * sizeof(float));
    }
    finish(out, path);
}

void write_bvecs(const std::filesystem::path& path, const VectorSet& data) {
    auto out = open_out(path);
    Writer w(out);
    std::vector<std::uint8_t> buf(data.dim());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = data.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (!(r[j] >= 0.0F && r[j] <= 255.0F) || std::floor(r[j]) != r[j]) {
                throw Error(ErrorKind::InvalidVector, "bvecs values must be integers in [0, 255]");
            }
            buf[j] = static_cast<std::uint8_t>(r[j]);
        }
        w.u32(to_u32(data.dim(), "dimension"));
        w.bytes(buf.data(), buf.size());
    }
    finish(out, path);
}

void write_ivecs(const std::filesystem::path& path, const std::vector<std::vector<std::int32_t>>& rows) {
    auto out = open_out(path);
    Writer w(out);
    for (const auto& r : rows) {
        w.u32(to_u32(r.size(), "dimension"));
        w.bytes(r.data(), r.size() * sizeof(std::int32_t));
    }
    finish(out, path);
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook) {
    auto out = open_out(path);
    Writer w(out);
    w.magic("ETCB");
    w.u32(to_u32(codebook.dim(), "d"));
    w.u32(to_u32(codebook.num_subspaces(), "M"));
    w.u32(to_u32(codebook.num_codewords(), "K"));
    w.bytes(codebook.centroids().data(), codebook.centroids().size() * sizeof(float));
    finish(out, path);
}

Codebook load_codebook(const std::filesystem::path& path) {
    auto in = open_in(path);
    Reader r(in, path.string());
    r.magic("ETCB");
    const std::size_t d = r.u32("d");
    const std::size_t m = r.u32("M");
    const std::size_t k = r.u32("K");
    if (m == 0 || d % m != 0 || k == 0 || k > kMaxCodewords) {
        r.fail("invalid codebook shape");
    }
    r.need(std::uint64_t{k} * d * sizeof(float), "centroids");
    std::vector<float> centroids(m * k * (d / m));
    r.bytes(centroids.data(), centroids.size() * sizeof(float), "centroids");
    r.expect_end();
    return Codebook(d, m, k, std::move(centroids));
}

void save_codes(const std::filesystem::path& path, const EncodedDataset& ds) {
    auto out = open_out(path);
    Writer w(out);
    w.magic("ETCD");
    w.u32(to_u32(ds.size(), "N"));
    w.u32(to_u32(ds.num_chunks(), "M"));
    w.u32(to_u32(ds.num_codewords(), "K"));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        w.u32(ds.id(i));
        w.bytes(ds.code(i).data(), ds.num_chunks());
    }
    finish(out, path);
}

EncodedDataset load_codes(const std::filesystem::path& path) {
    auto in = open_in(path);
    Reader r(in, path.string());
    r.magic("ETCD");
    const std::size_t n = r.u32("N");
    const std::size_t m = r.u32("M");
    const std::size_t k = r.u32("K");
    if (k == 0 || k > kMaxCodewords) {
        r.fail("invalid K");
    }
    r.need(std::uint64_t{n} * (4 + m), "code records");
    std::vector<Chunk> codes(n * m);
    std::vector<VectorId> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = r.u32("id");
        r.bytes(codes.data() + i * m, m, "code");
    }
    r.expect_end();
    return EncodedDataset(m, k, std::move(codes), std::move(ids));
}

void write_forest(std::ostream& out, const EForest& forest) {
    Writer w(out);
    w.magic("ETRE");
    w.u32(to_u32(forest.num_vectors(), "N"));
    w.u32(to_u32(forest.num_layers(), "M"));
    w.u32(to_u32(forest.num_codewords(), "K"));
    for (auto p : forest.chunk_order().permutation()) {
        const auto b = static_cast<std::uint8_t>(p);
        w.bytes(&b, 1);
    }
    w.u32(to_u32(forest.num_trees(), "T"));
    for (const auto& t : forest.trees()) {
        w.u32(to_u32(t.layer_offset(), "layer offset"));
        w.u32(to_u32(t.layer_count(), "layer count"));
        w.u64(t.size_bytes());
        w.bytes(t.bytes().data(), t.size_bytes());
    }
}

EForest read_forest(std::istream& in, std::string_view source) {
    Reader r(in, std::string(source));
    r.magic("ETRE");
    const std::size_t n = r.u32("N");
    const std::size_t m = r.u32("M");
    const std::size_t k = r.u32("K");
    if (m == 0 || m > layout::kMaxLayers || k == 0 || k > kMaxCodewords) {
        r.fail("invalid tree header");
    }
    std::vector<std::uint8_t> perm_bytes(m);
    r.bytes(perm_bytes.data(), m, "chunk permutation");
    const auto order = ChunkOrder::from_permutation({perm_bytes.begin(), perm_bytes.end()});
    const std::size_t count = r.u32("tree count");
    if (count > m) {
        r.fail("more trees than layers");
    }
    std::vector<ETreeBuffer> trees;
    for (std::size_t t = 0; t < count; ++t) {
        const std::size_t offset = r.u32("layer offset");
        const std::size_t layers = r.u32("layer count");
        const std::uint64_t len = r.u64("buffer length");
        if (layers == 0 || offset + layers > m) {
            r.fail("invalid tree descriptor");
        }
        r.need(len, "tree buffer");
        std::vector<std::uint8_t> bytes(len);
        r.bytes(bytes.data(), bytes.size(), "tree buffer");
        trees.push_back(ETreeBuffer::from_bytes(std::move(bytes), n, k, TreePlacement{order, offset, m}, layers));
    }
    return EForest(std::move(trees), n, k, order);
}

void save_forest(const std::filesystem::path& path, const EForest& forest) {
    auto out = open_out(path);
    write_forest(out, forest);
    finish(out, path);
}

EForest load_forest(const std::filesystem::path& path) {
    auto in = open_in(path);
    auto forest = read_forest(in, path.string());
    Reader(in, path.string()).expect_end();
    return forest;
}

}  // namespace etree::io
