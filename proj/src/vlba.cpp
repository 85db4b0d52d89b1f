#include "lgseg/vlba.hpp"

#include <cmath>
#include <stdexcept>

namespace lgseg {

VLBAParams VLBAParams::make(Rng& rng, int c_v, int c_l, int heads, bool tanh_gate) {
  if (heads < 1 || c_v % heads != 0)
    throw std::invalid_argument("VLBAParams: C_v not divisible by head count");
  VLBAParams p;
  const int c = c_v;  // shared width
  p.w_vq = Linear::make(rng, c_v, c);
  p.w_vv = Linear::make(rng, c_v, c);
  p.w_lk = Linear::make(rng, c_l, c);
  p.w_lv = Linear::make(rng, c_l, c);
  p.w1 = Linear::make(rng, c, c_v);
  p.w2 = Linear::make(rng, c, c_l);
  p.fuse_v = Mlp2::make(rng, 2 * c_v, c, c_v);
  p.fuse_l = Mlp2::make(rng, 2 * c_l, c, c_l);
  p.gate_v = Mlp2::make(rng, c_v, c, c_v, tanh_gate);
  p.gate_l = Mlp2::make(rng, c_l, c, c_l, tanh_gate);
  p.c_v = c_v;
  p.c_l = c_l;
  p.heads = heads;
  return p;
}

void VLBAParams::register_params(ParamSet& ps, const std::string& prefix) const {
  w_vq.register_params(ps, prefix + ".w_vq");
  w_vv.register_params(ps, prefix + ".w_vv");
  w_lk.register_params(ps, prefix + ".w_lk");
  w_lv.register_params(ps, prefix + ".w_lv");
  w1.register_params(ps, prefix + ".w1");
  w2.register_params(ps, prefix + ".w2");
  fuse_v.register_params(ps, prefix + ".fuse_v");
  fuse_l.register_params(ps, prefix + ".fuse_l");
  gate_v.register_params(ps, prefix + ".gate_v");
  gate_l.register_params(ps, prefix + ".gate_l");
}

namespace {

struct Responses {
  Tensor v_r;  // HW x C_v
  Tensor l_r;  // T x C_l, pad rows zeroed
};

// Both directions from the one shared affinity; compute_l skips the
// language-side work for the unidirectional variant.
Responses cross_responses(const Tensor& v, const TextFeatures& l,
                          const VLBAParams& p, bool compute_l) {
  Tensor vq = p.w_vq(v);
  Tensor lk = p.w_lk(l.L);
  Tensor lv = p.w_lv(l.L);
  Tensor vv = compute_l ? p.w_vv(v) : Tensor();
  const int c = p.c_v;
  const int dh = c / p.heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(p.c_v));
  std::vector<Tensor> vr_heads, lr_heads;
  for (int h = 0; h < p.heads; ++h) {
    Tensor vq_h = p.heads == 1 ? vq : slice(vq, 1, h * dh, dh);
    Tensor lk_h = p.heads == 1 ? lk : slice(lk, 1, h * dh, dh);
    Tensor lv_h = p.heads == 1 ? lv : slice(lv, 1, h * dh, dh);
    Tensor affinity = scale(matmul(vq_h, transpose(lk_h)), inv_scale);  // HW x T
    Tensor attn_words = masked_softmax(affinity, 1, l.keep);
    vr_heads.push_back(matmul(attn_words, lv_h));
    if (compute_l) {
      Tensor vv_h = p.heads == 1 ? vv : slice(vv, 1, h * dh, dh);
      Tensor attn_pixels = softmax(transpose(affinity), 1);  // T x HW
      lr_heads.push_back(matmul(attn_pixels, vv_h));
    }
  }
  Responses r;
  Tensor vr = p.heads == 1 ? vr_heads[0] : concat(1, vr_heads);
  r.v_r = p.w1(vr);
  if (compute_l) {
    Tensor lr = p.heads == 1 ? lr_heads[0] : concat(1, lr_heads);
    r.l_r = zero_rows(p.w2(lr), l.keep);
  }
  return r;
}

Tensor gated_residual(const Tensor& x, const Tensor& response, const Mlp2& fuse,
                      const Mlp2& gate) {
  Tensor merged = fuse(concat(1, {x, response}));
  return add(x, mul(merged, gate(merged)));
}

}  // namespace

std::pair<Tensor, TextFeatures> vlba_forward(const Tensor& v, const TextFeatures& l,
                                             const VLBAParams& p) {
  Responses r = cross_responses(v, l, p, /*compute_l=*/true);
  Tensor v_out = gated_residual(v, r.v_r, p.fuse_v, p.gate_v);
  Tensor l_out = gated_residual(l.L, r.l_r, p.fuse_l, p.gate_l);
  return {v_out, TextFeatures{l_out, l.keep, l.T}};
}

Tensor unidirectional_forward(const Tensor& v, const TextFeatures& l,
                              const VLBAParams& p) {
  Responses r = cross_responses(v, l, p, /*compute_l=*/false);
  return gated_residual(v, r.v_r, p.fuse_v, p.gate_v);
}

}  // namespace lgseg
