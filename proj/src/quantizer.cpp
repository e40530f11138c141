#include "etree/quantizer.hpp"

#include "etree/error.hpp"
#include "etree/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

namespace etree {

VectorSet::VectorSet(std::size_t dim, std::vector<float> values) : dim_(dim), values_(std::move(values)) {
    if (dim_ == 0 ? !values_.empty() : values_.size() % dim_ != 0) {
        throw Error(ErrorKind::DimensionError, "value count is not a multiple of dimension " + std::to_string(dim_));
    }
}

void VectorSet::push_back(std::span<const float> v) {
    if (v.size() != dim_) {
        throw Error(ErrorKind::DimensionError,
                    "expected length " + std::to_string(dim_) + ", got " + std::to_string(v.size()));
    }
    values_.insert(values_.end(), v.begin(), v.end());
}

void VectorSet::check_finite() const {
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(ErrorKind::InvalidVector, "non-finite value in row " + std::to_string(i / dim_));
        }
    }
}

Codebook::Codebook(std::size_t dim, std::size_t num_subspaces, std::size_t num_codewords,
                   std::vector<float> centroids)
    : dim_(dim), num_subspaces_(num_subspaces), num_codewords_(num_codewords), centroids_(std::move(centroids)) {
    if (num_subspaces_ == 0 || dim_ % num_subspaces_ != 0 || dim_ == 0) {
        throw Error(ErrorKind::InvalidSubspaceSplit,
                    "d=" + std::to_string(dim_) + " is not divisible into M=" + std::to_string(num_subspaces_));
    }
    if (num_codewords_ == 0 || num_codewords_ > kMaxCodewords) {
        throw Error(ErrorKind::ConfigError, "K must be in [1, 256], got " + std::to_string(num_codewords_));
    }
    if (centroids_.size() != num_subspaces_ * num_codewords_ * sub_dim()) {
        throw Error(ErrorKind::ConfigError, "codebook holds " + std::to_string(centroids_.size()) +
                                                " values, expected M*K*(d/M)");
    }
    for (float v : centroids_) {
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::InvalidVector, "non-finite centroid value");
        }
    }
    for (std::size_t m = 0; m < num_subspaces_; ++m) {
        scanners_.emplace_back(subspace(m), sub_dim());
    }
}

EncodedDataset::EncodedDataset(std::size_t num_chunks, std::size_t num_codewords)
    : num_chunks_(num_chunks), num_codewords_(num_codewords) {
    if (num_codewords_ == 0 || num_codewords_ > kMaxCodewords) {
        throw Error(ErrorKind::ConfigError, "K must be in [1, 256], got " + std::to_string(num_codewords_));
    }
}

EncodedDataset::EncodedDataset(std::size_t num_chunks, std::size_t num_codewords,
                               std::vector<Chunk> codes, std::vector<VectorId> ids)
    : EncodedDataset(num_chunks, num_codewords) {
    codes_ = std::move(codes);
    ids_ = std::move(ids);
    if (codes_.size() != ids_.size() * num_chunks_) {
        throw Error(ErrorKind::ConfigError, "code bytes do not match N*M");
    }
    validate();
}

void EncodedDataset::reserve(std::size_t n) {
    codes_.reserve(n * num_chunks_);
    ids_.reserve(n);
}

void EncodedDataset::append(std::span<const Chunk> code, VectorId id) {
    if (code.size() != num_chunks_) {
        throw Error(ErrorKind::DimensionError,
                    "code length " + std::to_string(code.size()) + ", expected " + std::to_string(num_chunks_));
    }
    codes_.insert(codes_.end(), code.begin(), code.end());
    ids_.push_back(id);
}

void EncodedDataset::validate() const {
    for (std::size_t i = 0; i < codes_.size(); ++i) {
        if (codes_[i] >= num_codewords_) {
            throw Error(ErrorKind::InvalidCode, "chunk " + std::to_string(codes_[i]) + " >= K at record " +
                                                    std::to_string(i / std::max<std::size_t>(num_chunks_, 1)));
        }
    }
    std::vector<VectorId> sorted = ids_;
    std::sort(sorted.begin(), sorted.end());
    const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
    if (dup != sorted.end()) {
        throw Error(ErrorKind::ConfigError, "duplicate vector id " + std::to_string(*dup));
    }
}

DistanceTable::DistanceTable(std::size_t num_subspaces, std::size_t num_codewords, std::vector<float> entries)
    : num_subspaces_(num_subspaces), num_codewords_(num_codewords), entries_(std::move(entries)) {
    if (entries_.size() != num_subspaces_ * num_codewords_) {
        throw Error(ErrorKind::ConfigError, "distance table needs M*K entries");
    }
}

namespace {

void check_query(const Codebook& codebook, std::span<const float> v) {
    if (v.size() != codebook.dim()) {
        throw Error(ErrorKind::DimensionError,
                    "vector length " + std::to_string(v.size()) + ", codebook d=" + std::to_string(codebook.dim()));
    }
}

}  // namespace

Codebook train_pq(const VectorSet& data, const TrainOptions& options, TrainReport* report) {
    const std::size_t d = data.dim();
    const std::size_t m_count = options.num_subspaces;
    const std::size_t k_count = options.num_codewords;
    if (m_count == 0 || d == 0 || d % m_count != 0) {
        throw Error(ErrorKind::InvalidSubspaceSplit,
                    "d=" + std::to_string(d) + " is not divisible into M=" + std::to_string(m_count));
    }
    if (k_count == 0 || k_count > kMaxCodewords) {
        throw Error(ErrorKind::ConfigError, "K must be in [1, 256]");
    }
    if (options.iterations < 1) {
        throw Error(ErrorKind::ConfigError, "iterations must be >= 1");
    }
    data.check_finite();

    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (options.max_points != 0 && options.max_points < rows.size()) {
        std::mt19937_64 rng(options.seed ^ 0x5bd1e995ULL);
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(options.max_points);
        std::sort(rows.begin(), rows.end());
    }
    if (rows.size() < k_count) {
        throw Error(ErrorKind::InsufficientData,
                    std::to_string(rows.size()) + " training points for K=" + std::to_string(k_count));
    }

    const std::size_t sub = d / m_count;
    std::vector<float> centroids(m_count * k_count * sub);
    std::vector<float> subdata(rows.size() * sub);
    if (report != nullptr) {
        report->objective.assign(m_count, {});
    }
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto v = data.row(rows[r]).subspan(m * sub, sub);
            std::copy(v.begin(), v.end(), subdata.begin() + static_cast<std::ptrdiff_t>(r * sub));
        }
        auto km = kmeans(subdata, sub, k_count, options.iterations,
                         options.seed + 0x9E3779B97F4A7C15ULL * (m + 1));
        std::copy(km.centroids.begin(), km.centroids.end(),
                  centroids.begin() + static_cast<std::ptrdiff_t>(m * k_count * sub));
        if (report != nullptr) {
            report->objective[m] = std::move(km.objective);
        }
    }
    return Codebook(d, m_count, k_count, std::move(centroids));
}

void encode(const Codebook& codebook, std::span<const float> v, std::span<Chunk> out) {
    check_query(codebook, v);
    if (out.size() != codebook.num_subspaces()) {
        throw Error(ErrorKind::DimensionError, "output code length must equal M");
    }
    const std::size_t sub = codebook.sub_dim();
    for (std::size_t m = 0; m < codebook.num_subspaces(); ++m) {
        out[m] = static_cast<Chunk>(codebook.nearest(m, v.subspan(m * sub, sub)));
    }
}

std::vector<Chunk> encode(const Codebook& codebook, std::span<const float> v) {
    std::vector<Chunk> code(codebook.num_subspaces());
    encode(codebook, v, code);
    return code;
}

EncodedDataset encode_all(const Codebook& codebook, const VectorSet& data) {
    if (data.dim() != codebook.dim() && !data.empty()) {
        throw Error(ErrorKind::DimensionError, "data d=" + std::to_string(data.dim()) +
                                                   ", codebook d=" + std::to_string(codebook.dim()));
    }
    data.check_finite();
    const std::size_t n = data.size();
    const std::size_t m_count = codebook.num_subspaces();
    std::vector<Chunk> codes(n * m_count);
    std::vector<VectorId> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        encode(codebook, data.row(i), std::span<Chunk>(codes.data() + i * m_count, m_count));
        ids[i] = static_cast<VectorId>(i);
    }
    return EncodedDataset(m_count, codebook.num_codewords(), std::move(codes), std::move(ids));
}

std::vector<float> decode(const Codebook& codebook, std::span<const Chunk> code) {
    if (code.size() != codebook.num_subspaces()) {
        throw Error(ErrorKind::InvalidCode, "code length must equal M");
    }
    std::vector<float> out;
    out.reserve(codebook.dim());
    for (std::size_t m = 0; m < code.size(); ++m) {
        if (code[m] >= codebook.num_codewords()) {
            throw Error(ErrorKind::InvalidCode, "chunk " + std::to_string(code[m]) + " >= K");
        }
        const auto c = codebook.centroid(m, code[m]);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

DistanceTable build_distance_table(const Codebook& codebook, std::span<const float> query) {
    check_query(codebook, query);
    const std::size_t sub = codebook.sub_dim();
    DistanceTable table(codebook.num_subspaces(), codebook.num_codewords());
    for (std::size_t m = 0; m < codebook.num_subspaces(); ++m) {
        const auto q = query.subspan(m * sub, sub);
        auto row = table.row(m);
        for (std::size_t k = 0; k < codebook.num_codewords(); ++k) {
            row[k] = static_cast<float>(squared_distance(q, codebook.centroid(m, k)));
        }
    }
    return table;
}

float adc_distance(const DistanceTable& table, std::span<const Chunk> code) {
    if (code.size() != table.num_subspaces()) {
        throw Error(ErrorKind::InvalidCode, "code length must equal M");
    }
    double sum = 0.0;
    for (std::size_t m = 0; m < code.size(); ++m) {
        if (code[m] >= table.num_codewords()) {
            throw Error(ErrorKind::InvalidCode, "chunk " + std::to_string(code[m]) + " >= K");
        }
        sum += table.at(m, code[m]);
    }
    return static_cast<float>(sum);
}

namespace {

// Fixed M lets the compiler unroll the sum; M = 0 reads it at run time.
template <std::size_t M>
void adc_kernel(const float* entries, std::size_t k_count, const Chunk* code, float* dst, std::size_t n,
                std::size_t m_runtime = M) {
    const std::size_t m_count = M == 0 ? m_runtime : M;
    for (std::size_t i = 0; i < n; ++i, code += m_count) {
        double sum = 0.0;
        for (std::size_t m = 0; m < m_count; ++m) {
            sum += entries[m * k_count + code[m]];
        }
        dst[i] = static_cast<float>(sum);
    }
}

}  // namespace

void adc_scan(const DistanceTable& table, const EncodedDataset& ds, std::span<float> out) {
    if (table.num_subspaces() != ds.num_chunks() || table.num_codewords() != ds.num_codewords()) {
        throw Error(ErrorKind::ConfigError, "table (M=" + std::to_string(table.num_subspaces()) +
                                                ", K=" + std::to_string(table.num_codewords()) +
                                                ") does not match dataset (M=" + std::to_string(ds.num_chunks()) +
                                                ", K=" + std::to_string(ds.num_codewords()) + ")");
    }
    if (out.size() != ds.size()) {
        throw Error(ErrorKind::ConfigError, "output needs one slot per code");
    }
    const std::size_t m_count = ds.num_chunks();
    const std::size_t k_count = ds.num_codewords();
    const float* entries = table.entries().data();
    const Chunk* code = ds.codes().data();
    float* dst = out.data();
    const std::size_t n = ds.size();
    switch (m_count) {
        case 4: adc_kernel<4>(entries, k_count, code, dst, n); break;
        case 8: adc_kernel<8>(entries, k_count, code, dst, n); break;
        case 16: adc_kernel<16>(entries, k_count, code, dst, n); break;
        default: adc_kernel<0>(entries, k_count, code, dst, n, m_count); break;
    }
}

std::vector<float> adc_scan(const DistanceTable& table, const EncodedDataset& ds) {
    std::vector<float> out(ds.size());
    adc_scan(table, ds, out);
    return out;
}

}  // namespace etree
