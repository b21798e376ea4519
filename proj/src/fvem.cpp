#include "slasd/fvem.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace slasd {
namespace {

constexpr std::uint8_t kMagic[4] = {0x46, 0x56, 0x45, 0x4D};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct Header {
  std::uint32_t rows;
  std::uint32_t cols;
};

Header parse_header(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < kFvemHeaderBytes) throw ParseError(origin + ": truncated FVEM header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError(origin + ": bad magic (expected FVEM)");
  const auto version = get_u16(bytes.data() + 4);
  if (version != kFvemVersion) throw ParseError(origin + ": unsupported FVEM version " + std::to_string(version));
  Header h{get_u32(bytes.data() + 8), get_u32(bytes.data() + 12)};
  if (h.rows == 0) throw ParseError(origin + ": zero rows");
  if (h.cols == 0) throw ParseError(origin + ": zero cols");
  return h;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open embedding file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m) {
  if (m.rows == 0 || m.cols == 0) throw InvalidArgument("write_embeddings: zero rows/cols");
  if (!m.all_finite()) throw InvalidArgument("write_embeddings: non-finite value");
  std::vector<std::uint8_t> out;
  out.reserve(kFvemHeaderBytes + m.size() * 4);
  for (auto c : kMagic) out.push_back(static_cast<std::uint8_t>(c));
  put_u16(out, kFvemVersion);
  put_u16(out, 0);
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (float v : m.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes, const std::string& origin) {
  const Header h = parse_header(bytes, origin);
  const std::size_t count = static_cast<std::size_t>(h.rows) * h.cols;
  if (bytes.size() < kFvemHeaderBytes + count * 4)
    throw ParseError(origin + ": truncated payload (" + std::to_string(bytes.size() - kFvemHeaderBytes) +
                     " bytes, expected " + std::to_string(count * 4) + ")");
  EmbeddingMatrix m(h.rows, h.cols);
  const std::uint8_t* p = bytes.data() + kFvemHeaderBytes;
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    const float v = std::bit_cast<float>(get_u32(p));
    if (!std::isfinite(v)) throw ParseError(origin + ": non-finite value at index " + std::to_string(i));
    m.data[i] = v;
  }
  return m;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  const auto bytes = encode_embeddings(m);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode_embeddings(bytes, path.string());
}

std::pair<std::uint32_t, std::uint32_t> peek_embedding_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open embedding file");
  std::uint8_t buf[kFvemHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), kFvemHeaderBytes);
  const auto got = static_cast<std::size_t>(in.gcount());
  const Header h = parse_header({buf, got}, path.string());
  return {h.rows, h.cols};
}

}  // namespace slasd
