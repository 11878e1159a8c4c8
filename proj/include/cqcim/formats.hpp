#pragma once

// On-disk formats. Every integer and float is little-endian; every file starts
// with a four-byte magic followed by a u32 format version.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cqcim/baselines.hpp"
#include "cqcim/cimsim.hpp"
#include "cqcim/numkit.hpp"
#include "cqcim/shaping.hpp"
#include "cqcim/training.hpp"

namespace cqcim {

inline constexpr std::uint32_t kFormatVersion = 1;

/// "CQEM": count u32, dim u32, dtype u32 (0 = f32), count*dim f32 row-major,
/// then an optional id table (u32 n, n x {u32 byte length, UTF-8 bytes}).
struct EmbeddingFile {
  Matrix data;
  std::vector<std::string> ids;  ///< empty when the file has no id table
};

EmbeddingFile read_embeddings(const std::filesystem::path& path);
/// Values are stored as f32.
void write_embeddings(const std::filesystem::path& path, const Matrix& data,
                      const std::vector<std::string>& ids = {});

/// "CQPV": EmbeddingFile header plus view_count u32 in {2, 3}; anchor,
/// positive and (optional) negative blocks follow back to back.
PairedViews read_paired_views(const std::filesystem::path& path);
void write_paired_views(const std::filesystem::path& path, const PairedViews& views);

/// "CQQC": count u32, dim u32, levels u32, levels f64 logical values,
/// count*dim u8 codes, optional id table.
struct QuantizedFile {
  QuantizedCorpus corpus;
  std::vector<std::string> ids;
};

QuantizedFile read_quantized(const std::filesystem::path& path);
void write_quantized(const std::filesystem::path& path, const QuantizedCorpus& corpus,
                     const std::vector<std::string>& ids = {});

/// "CQPQ": m u32, k u32, sub_dim u32, count u32, m*k*sub_dim f64 centroids,
/// count*m u8 codes, optional id table.
struct PqFile {
  PqCodebook codebook;
  PqCodes codes;
  std::vector<std::string> ids;
};

PqFile read_pq(const std::filesystem::path& path);
void write_pq(const std::filesystem::path& path, const PqCodebook& codebook, const PqCodes& codes,
              const std::vector<std::string>& ids = {});

/// "CQCK": compression head, quantizer, noise spec and training metadata.
struct Checkpoint {
  ShapingModel model;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint32_t epochs = 0;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

enum class FileKind { embeddings, paired_views, quantized, pq, checkpoint };

/// Identifies a file by its magic. Throws InputError for unknown content.
FileKind sniff_file(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes) noexcept;

}  // namespace cqcim
