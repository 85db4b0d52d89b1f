#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "lgseg/features.hpp"
#include "lgseg/nn.hpp"

namespace lgseg {

// mean of the real word rows, (1 x C_l)
Tensor pooled_sentence(const TextFeatures& text);

struct PixelDecoderConfig {
  std::array<int, 3> in_channels = {48, 72, 96};  // strides 8/16/32
  int c_d = 80;        // shared decoder width
  int ffn_hidden = 160;
  int n_layers = 6;
  int heads = 1;
  int c_l = 48;
  int c_o = 48;        // mask feature width
  bool use_l2va = true;
  bool sentence_query = false;  // L2VA keys from the pooled sentence
};

// Refines the stride 8/16/32 maps with joint multi-scale self-attention and
// language cross-attention, then upsamples stride 8 to stride 4 mask features.
struct PixelDecoder {
  struct Layer {
    MultiHeadAttention self_attn;
    LayerNorm ln1;
    MultiHeadAttention l2va;
    LayerNorm ln2;
    Linear ff1, ff2;
    LayerNorm ln3;
  };

  PixelDecoderConfig cfg;
  std::array<Linear, 3> in_proj;
  Tensor scale_embed;  // 3 x c_d, one learned embedding per scale
  std::vector<Layer> layers;
  Linear mask_proj;  // c_d -> c_o

  struct Output {
    FeatureMap r8, r16, r32;        // refined, width c_d
    FeatureMap mask_features;       // stride 4, width c_o
  };

  static PixelDecoder make(Rng& rng, const PixelDecoderConfig& cfg);
  Output forward(const PyramidFeatures& pyramid, const TextFeatures& text) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

struct GeneratorConfig {
  int c_o = 48;
  int kv_dim = 80;  // width of the refined visual tokens
  int ffn_hidden = 96;
  int n_layers = 6;
  int heads = 1;
  bool use_v2la = true;
  bool query_self_attn = false;  // enabled for learnable K > 1
};

// Updates prototype queries by cross-attending to one refined scale per
// layer, cycling 32 -> 16 -> 8.
struct PrototypeGenerator {
  struct Layer {
    std::optional<MultiHeadAttention> self_attn;
    std::optional<LayerNorm> ln_self;
    MultiHeadAttention cross;
    LayerNorm ln1;
    Linear ff1, ff2;
    LayerNorm ln2;
  };

  GeneratorConfig cfg;
  Tensor scale_embed;  // 3 x kv_dim
  std::vector<Layer> layers;

  static PrototypeGenerator make(Rng& rng, const GeneratorConfig& cfg);
  // queries: K x c_o; refined maps ordered {r8, r16, r32}
  Tensor forward(const Tensor& queries, const FeatureMap& r8, const FeatureMap& r16,
                 const FeatureMap& r32) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// logits[i] = prototype . mask_features[i]; prototypes: K x c_o -> N_o x K
Tensor make_mask(const Tensor& prototypes, const FeatureMap& mask_features);

// Bilinear-resize stride-4 logits to (out_h, out_w), then threshold at
// probability 0.5; a logit of exactly 0 counts as foreground.
std::vector<uint8_t> infer_mask(const Tensor& logits, int h4, int w4, int out_h,
                                int out_w);

}  // namespace lgseg
