#include "dbr/io/container.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dbr/errors.hpp"

namespace dbr::io {

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw LoadError("truncated data: need " + std::to_string(n) + " bytes at offset " +
                    std::to_string(pos_) + ", " + std::to_string(data_.size() - pos_) +
                    " available");
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

std::string crc32_hex(std::span<const std::uint8_t> bytes) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc32(bytes);
  return os.str();
}

std::vector<std::uint8_t> encode(const Container& c) {
  if (c.magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(c.magic.data()), 8});
  w.u32(c.version);
  const std::string header = c.header.dump();
  w.u64(header.size());
  w.bytes({reinterpret_cast<const std::uint8_t*>(header.data()), header.size()});
  w.u64(c.payload.size());
  w.bytes(c.payload);
  const std::uint32_t sum = crc32(w.data());
  w.u32(sum);
  return w.take();
}

Container decode(std::span<const std::uint8_t> bytes, std::string_view magic,
                 std::uint32_t version) {
  if (bytes.size() < 8 + 4 + 8 + 8 + 4) throw LoadError("file too short to be a container");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 8) != magic) {
    throw LoadError("bad magic: expected " + std::string(magic));
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  if (crc32(body) != stored) throw LoadError("checksum mismatch: file is corrupted");

  ByteReader r(body);
  for (int i = 0; i < 8; ++i) r.u8();
  Container c;
  c.magic = std::string(magic);
  c.version = r.u32();
  if (c.version != version) {
    throw LoadError("unsupported format version " + std::to_string(c.version) + " (expected " +
                    std::to_string(version) + ")");
  }
  const std::uint64_t hlen = r.u64();
  if (hlen > r.remaining()) throw LoadError("header length exceeds file size");
  std::string header(hlen, '\0');
  for (auto& ch : header) ch = static_cast<char>(r.u8());
  try {
    c.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed header: ") + e.what());
  }
  const std::uint64_t plen = r.u64();
  if (plen != r.remaining()) throw LoadError("payload length does not match file size");
  c.payload.resize(plen);
  for (auto& b : c.payload) b = r.u8();
  return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace dbr::io
