#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cw3/tensor.hpp"

namespace cw3 {

// Parse or integrity failure in an on-disk artifact. offset is the byte
// position the reader had reached when the problem was detected.
struct FormatError : std::runtime_error {
  FormatError(const std::string& msg, size_t offset_)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset_) + ")"),
        offset(offset_) {}
  size_t offset;
};

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(const void* p, size_t n);
  void str(const std::string& s);  // u32 length prefix + UTF-8 bytes
  const std::vector<uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<uint8_t> buf) : buf_(std::move(buf)) {}
  uint8_t u8();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  void bytes(void* p, size_t n);
  std::string str();
  size_t pos() const { return pos_; }
  size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::vector<uint8_t>& buffer() const { return buf_; }

 private:
  void need(size_t n);
  std::vector<uint8_t> buf_;
  size_t pos_ = 0;
};

// Named tensor record: name, dtype tag (0=f32, 1=f64), rank (u32),
// extents (u32 each), row-major little-endian payload.
void write_tensor_record(ByteWriter& w, const std::string& name, const Tensor& t);
std::pair<std::string, Tensor> read_tensor_record(ByteReader& r);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

uint32_t crc32_of(const uint8_t* data, size_t n);

}  // namespace cw3
