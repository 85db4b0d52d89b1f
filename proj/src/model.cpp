#include "lgseg/model.hpp"

#include <stdexcept>

namespace lgseg {

Model Model::make(const Config& cfg, const Vocab& vocab) {
  cfg.validate();
  Rng rng(cfg.seed);
  Model m;
  m.cfg = cfg;
  m.vocab = vocab;

  TextEncoderConfig tc;
  tc.vocab_size = vocab.size();
  tc.c_l = cfg.c_l;
  tc.layers = cfg.text_layers;
  tc.ffn_hidden = cfg.text_ffn;
  tc.heads = cfg.text_heads;
  tc.t_max = cfg.t_max;
  m.text_encoder = TextEncoder::make(rng, tc);

  VisionEncoderConfig vc;
  vc.channels = cfg.vis_channels;
  vc.blocks_per_stage = cfg.vis_blocks;
  vc.heads = cfg.vis_heads;
  vc.ffn_mult = cfg.vis_ffn_mult;
  vc.c_l = cfg.c_l;
  vc.vlba_heads = cfg.vlba_heads;
  vc.bidirectional = cfg.fusion == "vlba";
  vc.tanh_gate = cfg.gate_act == "tanh";
  vc.reuse_l = cfg.reuse_l;
  m.vision_encoder = VisionEncoder::make(rng, vc);

  PixelDecoderConfig pc;
  pc.in_channels = {cfg.vis_channels[1], cfg.vis_channels[2], cfg.vis_channels[3]};
  pc.c_d = cfg.c_decoder;
  pc.ffn_hidden = cfg.decoder_ffn;
  pc.n_layers = cfg.n_decoder_layers;
  pc.heads = cfg.decoder_heads;
  pc.c_l = cfg.c_l;
  pc.c_o = cfg.c_o;
  pc.use_l2va = cfg.l2va;
  pc.sentence_query = cfg.l2va_query == "sentence";
  m.pixel_decoder = PixelDecoder::make(rng, pc);

  GeneratorConfig gc;
  gc.c_o = cfg.c_o;
  gc.kv_dim = cfg.c_decoder;
  gc.ffn_hidden = cfg.gen_ffn;
  gc.n_layers = cfg.n_decoder_layers;
  gc.heads = cfg.decoder_heads;
  gc.use_v2la = cfg.v2la;
  gc.query_self_attn = cfg.mode == "learnable" && cfg.num_queries > 1;
  m.generator = PrototypeGenerator::make(rng, gc);

  m.query_proj = Linear::make(rng, cfg.c_l, cfg.c_o);
  if (cfg.mode == "learnable") {
    m.learnable_queries = normal_param(rng, {cfg.num_queries, cfg.c_o});
    if (cfg.num_queries > 1)
      m.integration = Mlp3::make(rng, cfg.num_queries, cfg.integration_hidden, 1);
  }
  m.prediction_head = Mlp3::make(rng, cfg.c_o, cfg.c_o, cfg.c_o);
  return m;
}

Model::Forward Model::forward(const Tensor& image, const Tokenized& tokens) const {
  TextFeatures text = text_encoder.forward(tokens);
  auto [pyramid, fused_text] = vision_encoder.forward(image, text);
  PixelDecoder::Output dec = pixel_decoder.forward(pyramid, fused_text);

  Tensor queries = cfg.mode == "linguistic"
                       ? query_proj(pooled_sentence(fused_text))
                       : learnable_queries;
  Tensor raw = generator.forward(queries, dec.r8, dec.r16, dec.r32);
  Tensor prototypes = prediction_head(raw);

  Tensor logits = make_mask(prototypes, dec.mask_features);  // N_o x K
  if (logits.dim(1) > 1) logits = integration(logits);

  Forward out;
  out.logits = logits;
  out.h4 = dec.mask_features.h;
  out.w4 = dec.mask_features.w;
  out.prototypes = prototypes;
  return out;
}

Model::Forward Model::forward(const Tensor& image, const std::string& expression) const {
  return forward(image, tokenize(expression, vocab, cfg.t_max));
}

ParamSet Model::params() const {
  ParamSet ps;
  text_encoder.register_params(ps, "text");
  vision_encoder.register_params(ps, "vision");
  pixel_decoder.register_params(ps, "pixdec");
  generator.register_params(ps, "gen");
  query_proj.register_params(ps, "query_proj");
  if (learnable_queries.defined()) ps.add("learnable_queries", learnable_queries);
  if (integration.l1.w.defined()) integration.register_params(ps, "integration");
  prediction_head.register_params(ps, "pred_head");
  return ps;
}

}  // namespace lgseg
