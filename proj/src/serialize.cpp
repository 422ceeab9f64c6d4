#include "cw3/serialize.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace cw3 {

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}

void ByteWriter::f64(double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  u64(bits);
}

void ByteWriter::bytes(const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void ByteReader::need(size_t n) {
  if (pos_ + n > buf_.size())
    throw FormatError("truncated input, needed " + std::to_string(n) + " bytes", pos_);
}

uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

uint32_t ByteReader::u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() {
  uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double ByteReader::f64() {
  uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void ByteReader::bytes(void* p, size_t n) {
  need(n);
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}

std::string ByteReader::str() {
  uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void write_tensor_record(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u8(static_cast<uint8_t>(t.dtype()));
  w.u32(static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) w.u32(static_cast<uint32_t>(d));
  if (t.dtype() == Dtype::kF32) {
    auto v = t.data<float>();
    for (float x : v) w.f32(x);
  } else {
    auto v = t.data<double>();
    for (double x : v) w.f64(x);
  }
}

std::pair<std::string, Tensor> read_tensor_record(ByteReader& r) {
  std::string name = r.str();
  uint8_t tag = r.u8();
  if (tag > 1) throw FormatError("bad dtype tag " + std::to_string(tag), r.pos() - 1);
  Dtype dt = static_cast<Dtype>(tag);
  uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank), r.pos() - 4);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = r.u32();
  Tensor t = Tensor::zeros(shape, dt);
  const int64_t n = t.numel();
  if (dt == Dtype::kF32) {
    auto v = t.data<float>();
    for (int64_t i = 0; i < n; ++i) v[i] = r.f32();
  } else {
    auto v = t.data<double>();
    for (int64_t i = 0; i < n; ++i) v[i] = r.f64();
  }
  return {std::move(name), std::move(t)};
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path, 0);
  f.seekg(0, std::ios::end);
  auto size = static_cast<size_t>(f.tellg());
  f.seekg(0);
  std::vector<uint8_t> buf(size);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!f) throw FormatError("read failed for " + path, 0);
  return buf;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

uint32_t crc32_of(const uint8_t* data, size_t n) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace cw3
