#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cw3/tensor.hpp"

namespace cw3 {

// 8-bit image, row-major HWC.
struct Image8 {
  int h = 0, w = 0, channels = 0;
  std::vector<uint8_t> data;
};

// Binary netpbm: P6 for 3 channels, P5 for 1. Header comments (#) allowed on
// read; the writer emits the canonical "P6\n<w> <h>\n255\n" form.
Image8 read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image8& img);
std::vector<uint8_t> encode_pnm(const Image8& img);
Image8 decode_pnm(const std::vector<uint8_t>& bytes);

// Frames on disk are P6; grayscale input is promoted to 3 channels.
// read_frame returns [3,H,W] in [0,1]; write_frame quantizes round(v*255).
Tensor read_frame(const std::string& path, Dtype dt = Dtype::kF32);
void write_frame(const Tensor& chw, const std::string& path);

Image8 tensor_to_image8(const Tensor& chw);

}  // namespace cw3
