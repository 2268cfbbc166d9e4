#ifndef PIISTEER_IO_HPP_
#define PIISTEER_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "piisteer/common.hpp"

namespace piisteer {

using Json = nlohmann::json;

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically via a sibling temporary file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian binary writer/reader for the tensor containers.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buffer_.append(s); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32s(std::span<const float> values);
  const std::string& str() const { return buffer_; }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::string_view bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  void f32s(std::span<float> out);
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Writes `magic`, a version tag, and a length-prefixed JSON header.
void write_container_header(ByteWriter& w, std::string_view magic, std::uint32_t version, const Json& header);
/// Validates magic and version; returns the header.
Json read_container_header(ByteReader& r, std::string_view magic, std::uint32_t version);

/// One JSON object per line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const Json> records);

}  // namespace piisteer

#endif  // PIISTEER_IO_HPP_
