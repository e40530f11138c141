#pragma once

#include "etree/eforest.hpp"
#include "etree/quantizer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>
#include <vector>

namespace etree::io {

enum class VectorFormat { Fvecs, Bvecs, Ivecs };

/// Picks the format from a .fvecs/.bvecs/.ivecs extension.
VectorFormat format_from_path(const std::filesystem::path& path);

/// Reads every record as floats. bvecs widens exactly; ivecs values that a
/// float cannot hold exactly are rejected. Errors carry the byte offset.
VectorSet read_vectors(const std::filesystem::path& path, VectorFormat format);
VectorSet read_vectors(const std::filesystem::path& path);

/// Raw int rows; lengths may differ between rows.
std::vector<std::vector<std::int32_t>> read_ivecs(const std::filesystem::path& path);

void write_fvecs(const std::filesystem::path& path, const VectorSet& data);
void write_bvecs(const std::filesystem::path& path, const VectorSet& data);
void write_ivecs(const std::filesystem::path& path, const std::vector<std::vector<std::int32_t>>& rows);

// "ETCB" v1: d, M, K, then M*K*(d/M) float32 in (m, k, dim) order.
void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

// "ETCD" v1: N, M, K, then N records of (u32 id, M chunk bytes).
void save_codes(const std::filesystem::path& path, const EncodedDataset& ds);
EncodedDataset load_codes(const std::filesystem::path& path);

// "ETRE" v1: N, M, K, M permutation bytes, T, then per tree
// (u32 layer_offset, u32 layer_count, u64 length, bytes).
void write_forest(std::ostream& out, const EForest& forest);
EForest read_forest(std::istream& in, std::string_view source = "stream");
void save_forest(const std::filesystem::path& path, const EForest& forest);
EForest load_forest(const std::filesystem::path& path);

}  // namespace etree::io
