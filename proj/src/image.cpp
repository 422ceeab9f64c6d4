#include "cw3/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cw3/serialize.hpp"

namespace cw3 {

namespace {

// Netpbm header token scanner: skips whitespace and '#' comments.
struct PnmScanner {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void skip_space() {
    while (pos < buf.size()) {
      uint8_t c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int next_int() {
    skip_space();
    if (pos >= buf.size()) throw FormatError("unexpected end of header", pos);
    if (!std::isdigit(buf[pos]))
      throw FormatError("expected integer in header", pos);
    long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1 << 28) throw FormatError("header value out of range", pos);
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

Image8 decode_pnm(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 2) throw FormatError("not a pnm file", 0);
  int channels;
  if (bytes[0] == 'P' && bytes[1] == '6')
    channels = 3;
  else if (bytes[0] == 'P' && bytes[1] == '5')
    channels = 1;
  else
    throw FormatError("bad magic, expected P5 or P6", 0);

  PnmScanner sc{bytes, 2};
  int w = sc.next_int();
  int h = sc.next_int();
  int maxval = sc.next_int();
  if (w <= 0 || h <= 0) throw FormatError("non-positive dimensions", sc.pos);
  if (maxval != 255) throw FormatError("unsupported maxval, expected 255", sc.pos);
  if (sc.pos >= bytes.size())
    throw FormatError("missing separator after maxval", sc.pos);
  ++sc.pos;  // single whitespace byte before the raster

  Image8 img;
  img.h = h;
  img.w = w;
  img.channels = channels;
  const size_t need = static_cast<size_t>(h) * w * channels;
  if (bytes.size() - sc.pos < need)
    throw FormatError("truncated raster, need " + std::to_string(need) + " bytes",
                      sc.pos);
  img.data.assign(bytes.begin() + static_cast<long>(sc.pos),
                  bytes.begin() + static_cast<long>(sc.pos + need));
  return img;
}

std::vector<uint8_t> encode_pnm(const Image8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("encode_pnm: 1 or 3 channels required");
  std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                       std::to_string(img.w) + " " + std::to_string(img.h) +
                       "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

Image8 read_pnm(const std::string& path) { return decode_pnm(read_file_bytes(path)); }

void write_pnm(const std::string& path, const Image8& img) {
  write_file_bytes(path, encode_pnm(img));
}

Tensor read_frame(const std::string& path, Dtype dt) {
  Image8 img = read_pnm(path);
  Tensor t = Tensor::zeros({3, img.h, img.w}, dt);
  const int64_t hw = static_cast<int64_t>(img.h) * img.w;
  for (int64_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) {
      const uint8_t v = img.channels == 3 ? img.data[p * 3 + c] : img.data[p];
      t.set(c * hw + p, static_cast<double>(v) / 255.0);
    }
  return t;
}

Image8 tensor_to_image8(const Tensor& chw) {
  if (chw.rank() != 3 || (chw.shape()[0] != 3 && chw.shape()[0] != 1))
    throw std::invalid_argument("tensor_to_image8: [1|3,H,W] required, got " +
                                shape_str(chw.shape()));
  Image8 img;
  img.channels = static_cast<int>(chw.shape()[0]);
  img.h = static_cast<int>(chw.shape()[1]);
  img.w = static_cast<int>(chw.shape()[2]);
  const int64_t hw = static_cast<int64_t>(img.h) * img.w;
  img.data.resize(static_cast<size_t>(hw) * img.channels);
  for (int64_t p = 0; p < hw; ++p)
    for (int c = 0; c < img.channels; ++c) {
      double v = chw.at(c * hw + p);
      v = std::clamp(v, 0.0, 1.0);
      img.data[p * img.channels + c] =
          static_cast<uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

void write_frame(const Tensor& chw, const std::string& path) {
  write_pnm(path, tensor_to_image8(chw));
}

}  // namespace cw3
