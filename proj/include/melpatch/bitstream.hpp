#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "melpatch/autoencoder.hpp"
#include "melpatch/codebook_io.hpp"
#include "melpatch/errors.hpp"
#include "melpatch/patch_grid.hpp"
#include "melpatch/quantizer.hpp"

namespace melpatch {

/// Fixed 40-byte stream header, little-endian, in this field order:
///
///   off  size  field
///     0     4  magic "MPC1"
///     4     2  version (1)
///     6     4  sample_rate
///    10     2  n_mels
///    12     2  hop
///    14     2  win_length
///    16     2  patch_t
///    18     2  patch_f
///    20     4  k
///    24     8  codebook_id
///    32     4  original_t
///    36     4  reserved (zero)
struct CodecHeader {
  static constexpr std::size_t kSize = 40;
  static constexpr std::uint16_t kVersion = 1;

  std::uint32_t sample_rate = 16000;
  std::uint16_t n_mels = 80;
  std::uint16_t hop = 128;
  std::uint16_t win_length = 512;
  std::uint16_t patch_t = 4;
  std::uint16_t patch_f = 4;
  std::uint32_t k = 4096;
  Digest codebook_id{};
  std::uint32_t original_t = 0;

  std::size_t rows() const { return (original_t + patch_t - 1u) / patch_t; }
  std::size_t cols() const { return n_mels / patch_f; }

  bool operator==(const CodecHeader&) const = default;
};

class BitstreamError : public FormatError {
 public:
  enum class Kind { BadMagic, BadVersion, BadHeader, Truncated, TrailingData, NonzeroPadding, IndexOutOfRange };
  BitstreamError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct BitrateSpec {
  double sample_rate = 16000;
  double hop = 128;
  int downsample_t = 4;
  int downsample_f = 4;
  int n_mels = 80;
  std::uint32_t k = 4096;
};

double tokens_per_second(const BitrateSpec& spec);

/// (sr / (hop * dt)) * (n_mels / df) * ceil(log2 k).
double bitrate_bps(const BitrateSpec& spec);

BitrateSpec bitrate_spec(const CodecHeader& header);

/// Payload size in bits for a grid under `k`, before byte padding.
std::uint64_t payload_bits(std::size_t rows, std::size_t cols, std::uint32_t k);

/// Header followed by MSB-first packed indices, row-major.
std::vector<unsigned char> pack(const TokenGrid& grid, const CodecHeader& header);

struct Unpacked {
  CodecHeader header;
  TokenGrid grid;
};

/// Exact inverse of pack. Throws BitstreamError on any inconsistency.
Unpacked unpack(std::span<const unsigned char> bytes);

std::vector<unsigned char> encode_header(const CodecHeader& header);
CodecHeader decode_header(std::span<const unsigned char> bytes);

/// Incremental encoder: mel frames in, token rows out. Emits one row as soon
/// as patch_t frames are buffered; flush() pads and emits the remainder.
/// The concatenated output equals the batch encoding bit for bit.
class StreamEncoder {
 public:
  StreamEncoder(const AutoencoderParams& params, const Codebook& cb, std::size_t n_mels,
                const PatchGridSpec& spec = {});

  /// `frames` is (count x n_mels). Returns completed rows, each `cols` indices.
  std::vector<std::vector<std::uint32_t>> push_frames(const Matrix& frames);
  std::vector<std::vector<std::uint32_t>> flush();

  std::size_t frames_seen() const { return frames_seen_; }
  std::size_t cols() const { return n_mels_ / static_cast<std::size_t>(spec_.patch_f); }

 private:
  std::vector<std::uint32_t> encode_buffer();

  const AutoencoderParams& params_;
  const Codebook& cb_;
  std::size_t n_mels_;
  PatchGridSpec spec_;
  Matrix buffer_;
  std::size_t buffered_ = 0;
  std::size_t frames_seen_ = 0;
};

/// Batch counterpart of StreamEncoder: patchify, encode, quantize.
TokenGrid encode_tokens(const AutoencoderParams& params, const Codebook& cb,
                        const MelSpectrogram& m, const PatchGridSpec& spec = {});

}  // namespace melpatch
