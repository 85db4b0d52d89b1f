#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgseg/tensor.hpp"

namespace lgseg {

// 8-bit interleaved image, row-major. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Decode a PNG, converting to the requested channel count (1 or 3).
ImageU8 read_png(const std::string& path, int channels);
void write_png(const std::string& path, const ImageU8& img);

// (h, w, c) tensor with values in [0, 1]
Tensor image_to_tensor(const ImageU8& img);

}  // namespace lgseg
