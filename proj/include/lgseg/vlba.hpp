#pragma once

#include <utility>

#include "lgseg/features.hpp"
#include "lgseg/nn.hpp"

namespace lgseg {

// Bidirectional vision-language attention. One affinity matrix
// A = Vq Lk^T / sqrt(C_v) drives both directions: pixels gather word values
// through a pad-masked softmax over words, words gather pixel values through
// a softmax over pixels on A^T. Each side is fused with its input and gated
// back onto the residual stream.
struct VLBAParams {
  Linear w_vq, w_vv;  // C_v -> C
  Linear w_lk, w_lv;  // C_l -> C
  Linear w1;          // C -> C_v, visual response projection
  Linear w2;          // C -> C_l, language response projection
  Mlp2 fuse_v;        // 2*C_v -> C -> C_v
  Mlp2 fuse_l;        // 2*C_l -> C -> C_l
  Mlp2 gate_v;        // C_v -> C -> C_v
  Mlp2 gate_l;        // C_l -> C -> C_l
  int c_v = 0;
  int c_l = 0;
  int heads = 1;

  // The shared width C equals C_v; the gate output is linear by default so
  // that zeroed gate weights make the module an exact identity. tanh_gate
  // switches to a squashed gate.
  static VLBAParams make(Rng& rng, int c_v, int c_l, int heads = 1,
                         bool tanh_gate = false);
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// V: (HW) x C_v flattened map. Returns (V', L') with L' carrying the same
// pad mask. Throws if the text is all padding.
std::pair<Tensor, TextFeatures> vlba_forward(const Tensor& v, const TextFeatures& l,
                                             const VLBAParams& p);

// Language-to-vision direction only; the language stream passes through
// untouched. Uses the same parameter block (w_vq, w_lk, w_lv, w1, fuse_v,
// gate_v participate).
Tensor unidirectional_forward(const Tensor& v, const TextFeatures& l,
                              const VLBAParams& p);

}  // namespace lgseg
