#pragma once

#include <string>

#include "lgseg/config.hpp"
#include "lgseg/decoder.hpp"
#include "lgseg/encoders.hpp"
#include "lgseg/vocab.hpp"

namespace lgseg {

// The full text-image to mask-logits pipeline: encoders with cross-modal
// fusion, language-guided pixel decoder, prototype generation (linguistic
// query or learnable queries), prediction head, and the dot-product mask.
struct Model {
  Config cfg;
  Vocab vocab;
  TextEncoder text_encoder;
  VisionEncoder vision_encoder;
  PixelDecoder pixel_decoder;
  PrototypeGenerator generator;
  Linear query_proj;          // C_l -> c_o, linguistic q0
  Tensor learnable_queries;   // K x c_o, learnable mode
  Mlp3 integration;           // per-pixel K -> 1, learnable K > 1
  Mlp3 prediction_head;       // c_o -> c_o

  struct Forward {
    Tensor logits;      // (h4*w4) x 1
    int h4 = 0, w4 = 0;
    Tensor prototypes;  // K x c_o, post prediction head
  };

  static Model make(const Config& cfg, const Vocab& vocab);

  Forward forward(const Tensor& image, const Tokenized& tokens) const;
  Forward forward(const Tensor& image, const std::string& expression) const;

  ParamSet params() const;
};

}  // namespace lgseg
