#include "piisteer/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

namespace piisteer {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void ByteWriter::u32(std::uint32_t v) { buffer_.append(reinterpret_cast<const char*>(&v), sizeof v); }
void ByteWriter::u64(std::uint64_t v) { buffer_.append(reinterpret_cast<const char*>(&v), sizeof v); }
void ByteWriter::f32s(std::span<const float> values) {
  buffer_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

std::string_view ByteReader::bytes(std::size_t n) {
  if (data_.size() - pos_ < n) throw FormatError("truncated container");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}
std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}
std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}
void ByteReader::f32s(std::span<float> out) {
  auto raw = bytes(out.size_bytes());
  std::memcpy(out.data(), raw.data(), raw.size());
}

void write_container_header(ByteWriter& w, std::string_view magic, std::uint32_t version, const Json& header) {
  w.bytes(magic);
  w.u32(version);
  const std::string text = header.dump();
  w.u64(text.size());
  w.bytes(text);
}

Json read_container_header(ByteReader& r, std::string_view magic, std::uint32_t version) {
  if (r.bytes(magic.size()) != magic) throw FormatError("bad magic, expected " + std::string(magic));
  const auto v = r.u32();
  if (v != version) {
    throw FormatError("unsupported " + std::string(magic) + " version " + std::to_string(v));
  }
  const auto len = r.u64();
  try {
    return Json::parse(r.bytes(len));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad container header: ") + e.what());
  }
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Json> records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_file(path, text);
}

}  // namespace piisteer
