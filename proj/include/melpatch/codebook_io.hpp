#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "melpatch/matrix.hpp"
#include "melpatch/quantizer.hpp"

namespace melpatch {

/// On-disk codebook ("MPCB", version 1), little-endian:
///
///   magic[4] version:u8 K:u32 D:u16 entries:f32[K*D]
///   flag:u8  (1 = projection block follows)
///   count:u8, then per tensor rows:u32 cols:u32 values:f32[rows*cols]
///
/// The projection block holds the patch encoder/decoder parameters.
struct CodebookFile {
  Codebook codebook;
  std::vector<Matrix> projection;  // empty = identity projection
};

std::vector<unsigned char> serialize_codebook(const CodebookFile& file);
CodebookFile parse_codebook(std::span<const unsigned char> bytes);

void save_codebook(const std::filesystem::path& path, const CodebookFile& file);
CodebookFile load_codebook(const std::filesystem::path& path);

using Digest = std::array<unsigned char, 8>;

/// 64-bit FNV-1a over the serialized bytes, little-endian.
Digest codebook_digest(std::span<const unsigned char> serialized);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes);

/// Rounds every value through float32, matching what a save/load cycle yields.
Matrix round_to_float32(const Matrix& m);

}  // namespace melpatch
