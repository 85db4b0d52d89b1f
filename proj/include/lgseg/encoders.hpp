#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "lgseg/features.hpp"
#include "lgseg/nn.hpp"
#include "lgseg/vlba.hpp"
#include "lgseg/vocab.hpp"

namespace lgseg {

struct TextEncoderConfig {
  int vocab_size = 0;
  int c_l = 48;
  int layers = 2;
  int ffn_hidden = 96;
  int heads = 1;
  int t_max = 24;
};

// Embedding lookup + learned positions, then masked transformer layers.
// Pad rows are zeroed on output.
struct TextEncoder {
  TextEncoderConfig cfg;
  Tensor tok_embed;  // vocab x C_l
  Tensor pos_embed;  // t_max x C_l
  std::vector<EncoderBlock> blocks;

  static TextEncoder make(Rng& rng, const TextEncoderConfig& cfg);
  TextFeatures forward(const Tokenized& tokens) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

struct VisionEncoderConfig {
  std::array<int, 4> channels = {24, 48, 72, 96};
  int blocks_per_stage = 1;
  int heads = 1;
  int ffn_mult = 2;
  int c_l = 48;      // language width entering the fusion blocks
  int vlba_heads = 1;
  bool bidirectional = true;  // false: language-to-vision only
  bool tanh_gate = false;
  bool reuse_l = true;  // thread each stage's L' into the next stage's fusion
};

// Four patch-merging transformer stages producing strides 4/8/16/32, with a
// cross-modal fusion block after each of stages 2-4.
struct VisionEncoder {
  VisionEncoderConfig cfg;
  struct Stage {
    Linear embed;  // (f*f*c_prev) -> c_stage
    std::vector<EncoderBlock> blocks;
    std::optional<VLBAParams> fusion;  // stages 2-4
  };
  std::vector<Stage> stages;

  static VisionEncoder make(Rng& rng, const VisionEncoderConfig& cfg);
  // image: (H, W, 3) in [0,1], H and W divisible by 32
  std::pair<PyramidFeatures, TextFeatures> forward(const Tensor& image,
                                                   const TextFeatures& text) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

}  // namespace lgseg
