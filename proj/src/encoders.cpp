#include "lgseg/encoders.hpp"

#include <stdexcept>
#include <string>

namespace lgseg {

TextEncoder TextEncoder::make(Rng& rng, const TextEncoderConfig& cfg) {
  TextEncoder enc;
  enc.cfg = cfg;
  enc.tok_embed = normal_param(rng, {cfg.vocab_size, cfg.c_l});
  enc.pos_embed = normal_param(rng, {cfg.t_max, cfg.c_l});
  for (int i = 0; i < cfg.layers; ++i)
    enc.blocks.push_back(EncoderBlock::make(rng, cfg.c_l, cfg.ffn_hidden, cfg.heads));
  return enc;
}

TextFeatures TextEncoder::forward(const Tokenized& tokens) const {
  if (static_cast<int>(tokens.ids.size()) != cfg.t_max)
    throw std::invalid_argument("TextEncoder: token length " +
                                std::to_string(tokens.ids.size()) +
                                " does not match t_max " + std::to_string(cfg.t_max));
  Tensor x = add(embedding_lookup(tok_embed, tokens.ids), pos_embed);
  for (const EncoderBlock& block : blocks) x = block.forward(x, &tokens.keep);
  x = zero_rows(x, tokens.keep);
  return TextFeatures{x, tokens.keep, tokens.T};
}

void TextEncoder::register_params(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".tok_embed", tok_embed);
  ps.add(prefix + ".pos_embed", pos_embed);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].register_params(ps, prefix + ".block" + std::to_string(i));
}

VisionEncoder VisionEncoder::make(Rng& rng, const VisionEncoderConfig& cfg) {
  VisionEncoder enc;
  enc.cfg = cfg;
  int prev = 3;
  for (int s = 0; s < 4; ++s) {
    Stage stage;
    const int f = s == 0 ? 4 : 2;
    stage.embed = Linear::make(rng, f * f * prev, cfg.channels[s]);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
      stage.blocks.push_back(EncoderBlock::make(
          rng, cfg.channels[s], cfg.channels[s] * cfg.ffn_mult, cfg.heads));
    if (s >= 1)
      stage.fusion = VLBAParams::make(rng, cfg.channels[s], cfg.c_l, cfg.vlba_heads,
                                      cfg.tanh_gate);
    enc.stages.push_back(std::move(stage));
    prev = cfg.channels[s];
  }
  return enc;
}

std::pair<PyramidFeatures, TextFeatures> VisionEncoder::forward(
    const Tensor& image, const TextFeatures& text) const {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw std::invalid_argument("VisionEncoder: image must be (H, W, 3), got " +
                                image.shape_str());
  const int h = image.dim(0), w = image.dim(1);
  if (h % 32 != 0 || w % 32 != 0)
    throw std::invalid_argument("VisionEncoder: input size " + std::to_string(h) +
                                "x" + std::to_string(w) + " not divisible by 32");
  PyramidFeatures pyr;
  TextFeatures threaded = text;   // language stream fed to each fusion block
  TextFeatures fused_text = text; // last fusion's language output
  Tensor x = reshape(image, {h * w, 3});
  int cur_h = h, cur_w = w;
  FeatureMap* levels[4] = {&pyr.s4, &pyr.s8, &pyr.s16, &pyr.s32};
  for (int s = 0; s < 4; ++s) {
    const Stage& stage = stages[s];
    const int f = s == 0 ? 4 : 2;
    x = stage.embed(merge_patches(x, cur_h, cur_w, f));
    cur_h /= f;
    cur_w /= f;
    if (s == 0)
      x = add(x, sinusoidal_position_grid(cur_h, cur_w, cfg.channels[0]));
    for (const EncoderBlock& block : stage.blocks) x = block.forward(x);
    if (stage.fusion) {
      if (cfg.bidirectional) {
        auto [v_out, l_out] = vlba_forward(x, threaded, *stage.fusion);
        x = v_out;
        fused_text = l_out;
        if (cfg.reuse_l) threaded = l_out;
      } else {
        x = unidirectional_forward(x, threaded, *stage.fusion);
      }
    }
    *levels[s] = FeatureMap{x, cur_h, cur_w};
  }
  return {pyr, cfg.bidirectional ? fused_text : text};
}

void VisionEncoder::register_params(ParamSet& ps, const std::string& prefix) const {
  for (size_t s = 0; s < stages.size(); ++s) {
    const std::string sp = prefix + ".stage" + std::to_string(s);
    stages[s].embed.register_params(ps, sp + ".embed");
    for (size_t b = 0; b < stages[s].blocks.size(); ++b)
      stages[s].blocks[b].register_params(ps, sp + ".block" + std::to_string(b));
    if (stages[s].fusion) stages[s].fusion->register_params(ps, sp + ".fusion");
  }
}

}  // namespace lgseg
