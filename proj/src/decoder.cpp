#include "lgseg/decoder.hpp"

#include <stdexcept>
#include <string>

namespace lgseg {

Tensor pooled_sentence(const TextFeatures& text) {
  return masked_mean_pool(text.L, text.keep, 0);
}

PixelDecoder PixelDecoder::make(Rng& rng, const PixelDecoderConfig& cfg) {
  if (cfg.n_layers < 0)
    throw std::invalid_argument("PixelDecoder: negative layer count");
  PixelDecoder dec;
  dec.cfg = cfg;
  for (int s = 0; s < 3; ++s)
    dec.in_proj[s] = Linear::make(rng, cfg.in_channels[s], cfg.c_d);
  dec.scale_embed = normal_param(rng, {3, cfg.c_d});
  for (int i = 0; i < cfg.n_layers; ++i) {
    Layer layer;
    layer.self_attn = MultiHeadAttention::make(rng, cfg.c_d, cfg.c_d, cfg.c_d, cfg.heads);
    layer.ln1 = LayerNorm::make(cfg.c_d);
    layer.l2va = MultiHeadAttention::make(rng, cfg.c_d, cfg.c_l, cfg.c_d, cfg.heads);
    layer.ln2 = LayerNorm::make(cfg.c_d);
    layer.ff1 = Linear::make(rng, cfg.c_d, cfg.ffn_hidden);
    layer.ff2 = Linear::make(rng, cfg.ffn_hidden, cfg.c_d);
    layer.ln3 = LayerNorm::make(cfg.c_d);
    dec.layers.push_back(std::move(layer));
  }
  dec.mask_proj = Linear::make(rng, cfg.c_d, cfg.c_o);
  return dec;
}

PixelDecoder::Output PixelDecoder::forward(const PyramidFeatures& pyramid,
                                           const TextFeatures& text) const {
  const FeatureMap* in[3] = {&pyramid.s8, &pyramid.s16, &pyramid.s32};
  for (int s = 0; s < 3; ++s) {
    if (!in[s]->feat.defined())
      throw std::invalid_argument("PixelDecoder: missing pyramid scale");
    if (in[s]->channels() != cfg.in_channels[s])
      throw std::invalid_argument("PixelDecoder: scale " + std::to_string(s) +
                                  " has width " + std::to_string(in[s]->channels()) +
                                  ", expected " + std::to_string(cfg.in_channels[s]));
  }
  std::vector<Tensor> tokens, pos_parts;
  for (int s = 0; s < 3; ++s) {
    tokens.push_back(in_proj[s](in[s]->feat));
    Tensor level = reshape(slice(scale_embed, 0, s, 1), {cfg.c_d});
    pos_parts.push_back(add_rowvec(
        sinusoidal_position_grid(in[s]->h, in[s]->w, cfg.c_d), level));
  }
  Tensor x = concat(0, tokens);
  Tensor pos = concat(0, pos_parts);

  Tensor sentence;
  if (cfg.use_l2va && cfg.sentence_query) sentence = pooled_sentence(text);

  for (const Layer& layer : layers) {
    Tensor qk = add(x, pos);
    x = layer.ln1(add(x, layer.self_attn.forward(qk, qk, x)));
    if (cfg.use_l2va) {
      Tensor attended = cfg.sentence_query
                            ? layer.l2va.forward(x, sentence, sentence)
                            : layer.l2va.forward(x, text.L, text.L, &text.keep);
      x = layer.ln2(add(x, attended));
    }
    x = layer.ln3(add(x, layer.ff2(relu(layer.ff1(x)))));
  }

  Output out;
  const int n8 = in[0]->tokens(), n16 = in[1]->tokens(), n32 = in[2]->tokens();
  out.r8 = {slice(x, 0, 0, n8), in[0]->h, in[0]->w};
  out.r16 = {slice(x, 0, n8, n16), in[1]->h, in[1]->w};
  out.r32 = {slice(x, 0, n8 + n16, n32), in[2]->h, in[2]->w};

  const int h4 = in[0]->h * 2, w4 = in[0]->w * 2;
  Tensor up = bilinear_resize(reshape(out.r8.feat, {in[0]->h, in[0]->w, cfg.c_d}),
                              h4, w4);
  out.mask_features = {mask_proj(reshape(up, {h4 * w4, cfg.c_d})), h4, w4};
  return out;
}

void PixelDecoder::register_params(ParamSet& ps, const std::string& prefix) const {
  for (int s = 0; s < 3; ++s)
    in_proj[s].register_params(ps, prefix + ".in_proj" + std::to_string(s));
  ps.add(prefix + ".scale_embed", scale_embed);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    layers[i].self_attn.register_params(ps, lp + ".self_attn");
    layers[i].ln1.register_params(ps, lp + ".ln1");
    layers[i].l2va.register_params(ps, lp + ".l2va");
    layers[i].ln2.register_params(ps, lp + ".ln2");
    layers[i].ff1.register_params(ps, lp + ".ff1");
    layers[i].ff2.register_params(ps, lp + ".ff2");
    layers[i].ln3.register_params(ps, lp + ".ln3");
  }
  mask_proj.register_params(ps, prefix + ".mask_proj");
}

PrototypeGenerator PrototypeGenerator::make(Rng& rng, const GeneratorConfig& cfg) {
  if (cfg.n_layers < 0)
    throw std::invalid_argument("PrototypeGenerator: negative layer count");
  PrototypeGenerator gen;
  gen.cfg = cfg;
  gen.scale_embed = normal_param(rng, {3, cfg.kv_dim});
  for (int i = 0; i < cfg.n_layers; ++i) {
    Layer layer;
    if (cfg.query_self_attn) {
      layer.self_attn = MultiHeadAttention::make(rng, cfg.c_o, cfg.c_o, cfg.c_o,
                                                 cfg.heads);
      layer.ln_self = LayerNorm::make(cfg.c_o);
    }
    layer.cross = MultiHeadAttention::make(rng, cfg.c_o, cfg.kv_dim, cfg.c_o,
                                           cfg.heads);
    layer.ln1 = LayerNorm::make(cfg.c_o);
    layer.ff1 = Linear::make(rng, cfg.c_o, cfg.ffn_hidden);
    layer.ff2 = Linear::make(rng, cfg.ffn_hidden, cfg.c_o);
    layer.ln2 = LayerNorm::make(cfg.c_o);
    gen.layers.push_back(std::move(layer));
  }
  return gen;
}

Tensor PrototypeGenerator::forward(const Tensor& queries, const FeatureMap& r8,
                                   const FeatureMap& r16, const FeatureMap& r32) const {
  // visit the coarsest scale first, cycling 32 -> 16 -> 8
  const FeatureMap* cycle[3] = {&r32, &r16, &r8};
  const int scale_index[3] = {2, 1, 0};  // row of scale_embed per cycle slot
  Tensor q = queries;
  for (size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    const FeatureMap& kv = *cycle[i % 3];
    Tensor level = reshape(slice(scale_embed, 0, scale_index[i % 3], 1),
                           {cfg.kv_dim});
    Tensor keys = add_rowvec(
        add(kv.feat, sinusoidal_position_grid(kv.h, kv.w, cfg.kv_dim)), level);
    if (layer.self_attn)
      q = (*layer.ln_self)(add(q, layer.self_attn->forward(q, q, q)));
    if (cfg.use_v2la)
      q = layer.ln1(add(q, layer.cross.forward(q, keys, kv.feat)));
    q = layer.ln2(add(q, layer.ff2(relu(layer.ff1(q)))));
  }
  return q;
}

void PrototypeGenerator::register_params(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".scale_embed", scale_embed);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = prefix + ".layer" + std::to_string(i);
    if (layers[i].self_attn) {
      layers[i].self_attn->register_params(ps, lp + ".self_attn");
      layers[i].ln_self->register_params(ps, lp + ".ln_self");
    }
    layers[i].cross.register_params(ps, lp + ".cross");
    layers[i].ln1.register_params(ps, lp + ".ln1");
    layers[i].ff1.register_params(ps, lp + ".ff1");
    layers[i].ff2.register_params(ps, lp + ".ff2");
    layers[i].ln2.register_params(ps, lp + ".ln2");
  }
}

Tensor make_mask(const Tensor& prototypes, const FeatureMap& mask_features) {
  if (prototypes.rank() != 2 || prototypes.dim(1) != mask_features.channels())
    throw std::invalid_argument("make_mask: prototype width " +
                                prototypes.shape_str() + " vs mask features " +
                                mask_features.feat.shape_str());
  return matmul(mask_features.feat, transpose(prototypes));
}

std::vector<uint8_t> infer_mask(const Tensor& logits, int h4, int w4, int out_h,
                                int out_w) {
  if (logits.size() != static_cast<int64_t>(h4) * w4)
    throw std::invalid_argument("infer_mask: logit count does not match grid");
  // resize logits first, then threshold: sigma(z) >= 0.5 iff z >= 0
  Tensor up = bilinear_resize(reshape(logits, {h4, w4, 1}), out_h, out_w);
  std::vector<uint8_t> mask(static_cast<size_t>(out_h) * out_w);
  for (int64_t i = 0; i < up.size(); ++i) mask[i] = up[i] >= 0.0 ? 1 : 0;
  return mask;
}

}  // namespace lgseg
