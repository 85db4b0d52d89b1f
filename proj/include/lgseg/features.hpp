#pragma once

#include <cstdint>
#include <vector>

#include "lgseg/tensor.hpp"

namespace lgseg {

// Per-word language features. L is T_max x C_l; keep[t] != 0 marks a real
// word. Rows beyond the real words are only ever consumed through masked ops.
struct TextFeatures {
  Tensor L;
  std::vector<uint8_t> keep;
  int T = 0;  // number of real words, >= 1

  int t_max() const { return L.dim(0); }
  int c_l() const { return L.dim(1); }
};

// One pyramid level: a flattened (h*w) x c feature map plus its grid size.
struct FeatureMap {
  Tensor feat;
  int h = 0;
  int w = 0;

  int channels() const { return feat.dim(1); }
  int tokens() const { return h * w; }
};

// Visual features at strides 4/8/16/32 of the input resolution.
struct PyramidFeatures {
  FeatureMap s4, s8, s16, s32;
};

}  // namespace lgseg
