#include "melpatch/codebook_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "melpatch/errors.hpp"

namespace melpatch {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'B'};
constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(double v) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    u32(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> in) : in_(in) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint16_t u16() {
    const auto* p = need(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = need(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    if (!std::isfinite(f)) throw FormatError("codebook: non-finite value");
    return f;
  }
  const unsigned char* need(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("codebook: truncated file");
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const unsigned char> in_;
  std::size_t pos_ = 0;
};

Matrix read_matrix(Reader& r, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = r.f32();
  return m;
}

}  // namespace

std::vector<unsigned char> serialize_codebook(const CodebookFile& file) {
  const Codebook& cb = file.codebook;
  if (cb.k() > std::numeric_limits<std::uint32_t>::max() ||
      cb.dim() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("codebook: shape exceeds format limits");
  }
  if (file.projection.size() > 255) throw std::invalid_argument("codebook: too many tensors");

  Writer w;
  w.bytes(kMagic, 4);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(cb.k()));
  w.u16(static_cast<std::uint16_t>(cb.dim()));
  for (double v : cb.entries().data()) w.f32(v);
  w.u8(file.projection.empty() ? 0 : 1);
  if (!file.projection.empty()) {
    w.u8(static_cast<std::uint8_t>(file.projection.size()));
    for (const Matrix& t : file.projection) {
      w.u32(static_cast<std::uint32_t>(t.rows()));
      w.u32(static_cast<std::uint32_t>(t.cols()));
      for (double v : t.data()) w.f32(v);
    }
  }
  return w.take();
}

CodebookFile parse_codebook(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.need(4), kMagic, 4) != 0) throw FormatError("codebook: bad magic");
  if (const auto v = r.u8(); v != kVersion) {
    throw FormatError("codebook: unsupported version " + std::to_string(v));
  }
  const std::uint32_t k = r.u32();
  const std::uint16_t dim = r.u16();
  if (k == 0 || dim == 0) throw FormatError("codebook: empty shape");
  if (static_cast<std::uint64_t>(k) * dim * 4 > bytes.size()) {
    throw FormatError("codebook: truncated file");
  }

  CodebookFile file;
  file.codebook = Codebook(read_matrix(r, k, dim));
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw FormatError("codebook: bad projection flag");
  if (flag == 1) {
    const std::uint8_t count = r.u8();
    for (std::uint8_t i = 0; i < count; ++i) {
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      if (static_cast<std::uint64_t>(rows) * cols * 4 > bytes.size()) {
        throw FormatError("codebook: truncated projection tensor");
      }
      file.projection.push_back(read_matrix(r, rows, cols));
    }
  }
  if (!r.done()) throw FormatError("codebook: trailing bytes");
  return file;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

void save_codebook(const std::filesystem::path& path, const CodebookFile& file) {
  write_file(path, serialize_codebook(file));
}

CodebookFile load_codebook(const std::filesystem::path& path) {
  return parse_codebook(read_file(path));
}

Digest codebook_digest(std::span<const unsigned char> serialized) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : serialized) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  Digest d{};
  for (int i = 0; i < 8; ++i) d[i] = static_cast<unsigned char>(h >> (8 * i));
  return d;
}

Matrix round_to_float32(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = static_cast<float>(v);
  return out;
}

}  // namespace melpatch
