#include "melpatch/bitstream.hpp"

#include <cstring>

namespace melpatch {

namespace {

using Kind = BitstreamError::Kind;

constexpr char kMagic[4] = {'M', 'P', 'C', '1'};

void put(std::vector<unsigned char>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get(std::span<const unsigned char> in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return v;
}

std::size_t payload_bytes(std::uint64_t bits) { return static_cast<std::size_t>((bits + 7) / 8); }

}  // namespace

double tokens_per_second(const BitrateSpec& s) {
  if (!(s.sample_rate > 0) || !(s.hop > 0) || s.downsample_t <= 0 || s.downsample_f <= 0 ||
      s.n_mels <= 0 || s.k == 0) {
    throw std::invalid_argument("bitrate: all fields must be positive");
  }
  if (s.n_mels % s.downsample_f != 0) {
    throw std::invalid_argument("bitrate: n_mels not divisible by frequency downsampling");
  }
  return s.sample_rate / (s.hop * s.downsample_t) * (s.n_mels / s.downsample_f);
}

double bitrate_bps(const BitrateSpec& s) {
  return tokens_per_second(s) * bits_per_index(s.k);
}

BitrateSpec bitrate_spec(const CodecHeader& h) {
  return {static_cast<double>(h.sample_rate), static_cast<double>(h.hop), h.patch_t, h.patch_f,
          h.n_mels, h.k};
}

std::uint64_t payload_bits(std::size_t rows, std::size_t cols, std::uint32_t k) {
  return static_cast<std::uint64_t>(rows) * cols * static_cast<std::uint64_t>(bits_per_index(k));
}

std::vector<unsigned char> encode_header(const CodecHeader& h) {
  std::vector<unsigned char> out;
  out.reserve(CodecHeader::kSize);
  out.insert(out.end(), kMagic, kMagic + 4);
  put(out, CodecHeader::kVersion, 2);
  put(out, h.sample_rate, 4);
  put(out, h.n_mels, 2);
  put(out, h.hop, 2);
  put(out, h.win_length, 2);
  put(out, h.patch_t, 2);
  put(out, h.patch_f, 2);
  put(out, h.k, 4);
  out.insert(out.end(), h.codebook_id.begin(), h.codebook_id.end());
  put(out, h.original_t, 4);
  put(out, 0, 4);
  return out;
}

CodecHeader decode_header(std::span<const unsigned char> in) {
  if (in.size() < CodecHeader::kSize) {
    if (in.size() >= 4 && std::memcmp(in.data(), kMagic, 4) != 0) {
      throw BitstreamError(Kind::BadMagic, "bitstream: bad magic");
    }
    throw BitstreamError(Kind::Truncated, "bitstream: truncated header");
  }
  if (std::memcmp(in.data(), kMagic, 4) != 0) {
    throw BitstreamError(Kind::BadMagic, "bitstream: bad magic");
  }
  if (const auto v = get(in, 4, 2); v != CodecHeader::kVersion) {
    throw BitstreamError(Kind::BadVersion, "bitstream: unsupported version " + std::to_string(v));
  }
  CodecHeader h;
  h.sample_rate = static_cast<std::uint32_t>(get(in, 6, 4));
  h.n_mels = static_cast<std::uint16_t>(get(in, 10, 2));
  h.hop = static_cast<std::uint16_t>(get(in, 12, 2));
  h.win_length = static_cast<std::uint16_t>(get(in, 14, 2));
  h.patch_t = static_cast<std::uint16_t>(get(in, 16, 2));
  h.patch_f = static_cast<std::uint16_t>(get(in, 18, 2));
  h.k = static_cast<std::uint32_t>(get(in, 20, 4));
  std::memcpy(h.codebook_id.data(), in.data() + 24, 8);
  h.original_t = static_cast<std::uint32_t>(get(in, 32, 4));
  if (get(in, 36, 4) != 0) throw BitstreamError(Kind::BadHeader, "bitstream: reserved bytes set");
  if (h.k == 0 || h.patch_t == 0 || h.patch_f == 0 || h.n_mels == 0 || h.sample_rate == 0 ||
      h.hop == 0) {
    throw BitstreamError(Kind::BadHeader, "bitstream: zero-valued header field");
  }
  if (h.n_mels % h.patch_f != 0) {
    throw BitstreamError(Kind::BadHeader, "bitstream: n_mels not divisible by patch_f");
  }
  return h;
}

std::vector<unsigned char> pack(const TokenGrid& grid, const CodecHeader& header) {
  if (header.k == 0) throw std::invalid_argument("pack: k must be >= 1");
  if (grid.rows != header.rows() || grid.cols != header.cols() ||
      grid.original_t != header.original_t) {
    throw std::invalid_argument("pack: grid shape does not match header");
  }
  if (grid.indices.size() != grid.rows * grid.cols) {
    throw std::invalid_argument("pack: index count does not match grid shape");
  }
  const int bits = bits_per_index(header.k);
  std::vector<unsigned char> out = encode_header(header);
  out.reserve(out.size() + payload_bytes(payload_bits(grid.rows, grid.cols, header.k)));

  std::uint64_t acc = 0;
  int filled = 0;
  for (std::uint32_t idx : grid.indices) {
    if (idx >= header.k) {
      throw BitstreamError(Kind::IndexOutOfRange, "pack: index " + std::to_string(idx) +
                                                      " >= k=" + std::to_string(header.k));
    }
    acc = (acc << bits) | idx;
    filled += bits;
    while (filled >= 8) {
      filled -= 8;
      out.push_back(static_cast<unsigned char>(acc >> filled));
      acc &= (std::uint64_t{1} << filled) - 1;
    }
  }
  if (filled > 0) out.push_back(static_cast<unsigned char>(acc << (8 - filled)));
  return out;
}

Unpacked unpack(std::span<const unsigned char> bytes) {
  Unpacked u;
  u.header = decode_header(bytes);
  const CodecHeader& h = u.header;
  const int bits = bits_per_index(h.k);
  const std::size_t rows = h.rows();
  const std::size_t cols = h.cols();
  const std::uint64_t nbits = payload_bits(rows, cols, h.k);
  const std::size_t expected = CodecHeader::kSize + payload_bytes(nbits);
  if (bytes.size() < expected) {
    throw BitstreamError(Kind::Truncated, "bitstream: payload truncated (" +
                                              std::to_string(bytes.size()) + " of " +
                                              std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    throw BitstreamError(Kind::TrailingData, "bitstream: trailing bytes after payload");
  }

  u.grid = TokenGrid{rows, cols, h.original_t, std::vector<std::uint32_t>(rows * cols)};
  const auto payload = bytes.subspan(CodecHeader::kSize);
  std::size_t pos = 0;
  std::uint64_t acc = 0;
  int filled = 0;
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  for (std::uint32_t& idx : u.grid.indices) {
    while (filled < bits) {
      acc = (acc << 8) | payload[pos++];
      filled += 8;
    }
    filled -= bits;
    idx = static_cast<std::uint32_t>((acc >> filled) & mask);
    acc &= (std::uint64_t{1} << filled) - 1;
    if (idx >= h.k) {
      throw BitstreamError(Kind::IndexOutOfRange, "bitstream: index " + std::to_string(idx) +
                                                      " >= k=" + std::to_string(h.k));
    }
  }
  if (acc != 0 || (pos < payload.size() && payload[pos] != 0)) {
    throw BitstreamError(Kind::NonzeroPadding, "bitstream: nonzero padding bits");
  }
  return u;
}

TokenGrid encode_tokens(const AutoencoderParams& params, const Codebook& cb,
                        const MelSpectrogram& m, const PatchGridSpec& spec) {
  const PatchSet ps = patchify(m, spec);
  return quantize(cb, params.encode_all(ps.patches), ps.rows, ps.cols, ps.original_t);
}

StreamEncoder::StreamEncoder(const AutoencoderParams& params, const Codebook& cb,
                             std::size_t n_mels, const PatchGridSpec& spec)
    : params_(params), cb_(cb), n_mels_(n_mels), spec_(spec),
      buffer_(static_cast<std::size_t>(spec.patch_t), n_mels) {
  spec_.validate();
  if (n_mels % static_cast<std::size_t>(spec.patch_f) != 0) {
    throw std::invalid_argument("StreamEncoder: n_mels not divisible by patch_f");
  }
  if (params.input_dim() != spec.patch_size() || params.latent_dim() != cb.dim()) {
    throw std::invalid_argument("StreamEncoder: model does not match grid or codebook");
  }
}

std::vector<std::uint32_t> StreamEncoder::encode_buffer() {
  const std::size_t pt = static_cast<std::size_t>(spec_.patch_t);
  const std::size_t pf = static_cast<std::size_t>(spec_.patch_f);
  std::vector<double> patch(pt * pf);
  std::vector<double> latent(params_.latent_dim());
  std::vector<std::uint32_t> row(cols());
  for (std::size_t j = 0; j < cols(); ++j) {
    for (std::size_t dt = 0; dt < pt; ++dt) {
      for (std::size_t df = 0; df < pf; ++df) {
        patch[dt * pf + df] = dt < buffered_ ? buffer_(dt, j * pf + df) : spec_.pad_value;
      }
    }
    params_.encode(patch, latent);
    row[j] = nearest(cb_, latent).index;
  }
  buffered_ = 0;
  return row;
}

std::vector<std::vector<std::uint32_t>> StreamEncoder::push_frames(const Matrix& frames) {
  if (frames.rows() > 0 && frames.cols() != n_mels_) {
    throw std::invalid_argument("StreamEncoder: frame has " + std::to_string(frames.cols()) +
                                " bands, expected " + std::to_string(n_mels_));
  }
  std::vector<std::vector<std::uint32_t>> rows;
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    const auto src = frames.row(t);
    std::copy(src.begin(), src.end(), buffer_.row(buffered_).begin());
    ++buffered_;
    ++frames_seen_;
    if (buffered_ == static_cast<std::size_t>(spec_.patch_t)) rows.push_back(encode_buffer());
  }
  return rows;
}

std::vector<std::vector<std::uint32_t>> StreamEncoder::flush() {
  std::vector<std::vector<std::uint32_t>> rows;
  if (buffered_ > 0) rows.push_back(encode_buffer());
  return rows;
}

}  // namespace melpatch
