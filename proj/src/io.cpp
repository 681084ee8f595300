#include "contextvp/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cvp {

static_assert(std::endian::native == std::endian::little, "byte I/O assumes a little-endian host");

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {
template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}
}  // namespace

void ByteWriter::u32(std::uint32_t v) { put(bytes_, v); }
void ByteWriter::u64(std::uint64_t v) { put(bytes_, v); }
void ByteWriter::f32(float v) { put(bytes_, v); }
void ByteWriter::f64(double v) { put(bytes_, v); }

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n)
    throw FormatError(FormatError::Kind::Truncated, std::string("truncated file while reading ") + what + " at byte " +
                                                        std::to_string(pos_));
}

namespace {
template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}
}  // namespace

std::uint8_t ByteReader::u8(const char* what) {
  need(1, what);
  return bytes_[pos_++];
}
std::uint32_t ByteReader::u32(const char* what) {
  need(4, what);
  return get<std::uint32_t>(bytes_, pos_);
}
std::uint64_t ByteReader::u64(const char* what) {
  need(8, what);
  return get<std::uint64_t>(bytes_, pos_);
}
float ByteReader::f32(const char* what) {
  need(4, what);
  return get<float>(bytes_, pos_);
}
double ByteReader::f64(const char* what) {
  need(8, what);
  return get<double>(bytes_, pos_);
}
std::string ByteReader::raw(std::size_t n, const char* what) {
  need(n, what);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint8_t quantize8(double v) {
  const double q = std::floor(255.0 * v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

void write_pnm(const std::filesystem::path& path, const Tensor& frame) {
  if (frame.rank() != 3 || (frame.dim(2) != 1 && frame.dim(2) != 3))
    throw ShapeError("image export expects [H, W, 1|3], got " + frame.shape().str());
  std::ostringstream header;
  header << (frame.dim(2) == 1 ? "P5" : "P6") << "\n" << frame.dim(1) << " " << frame.dim(0) << "\n255\n";
  ByteWriter w;
  w.raw(header.str());
  for (Index i = 0; i < frame.size(); ++i) w.u8(quantize8(frame.data()[i]));
  write_file_atomic(path, w.bytes());
}

Tensor read_pnm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw FormatError(FormatError::Kind::BadMagic, "not a binary PGM/PPM: " + path.string());
  const Index w = std::stol(token()), h = std::stol(token());
  if (std::stol(token()) != 255) throw FormatError(FormatError::Kind::Mismatch, "only 8-bit images are supported");
  ++pos;  // single whitespace after maxval
  const Index c = magic == "P5" ? 1 : 3;
  if (bytes.size() - pos < static_cast<std::size_t>(h * w * c))
    throw FormatError(FormatError::Kind::Truncated, "truncated image data in " + path.string());
  Tensor out(Shape{h, w, c});
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = bytes[pos + static_cast<std::size_t>(i)] / 255.0;
  return out;
}

}  // namespace cvp
