#include "lgseg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace lgseg {

Tensor xavier_param(Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(fan_in) * fan_out);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::param({fan_in, fan_out}, std::move(v));
}

Tensor normal_param(Rng& rng, std::vector<int> shape, double stddev) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::param(std::move(shape), std::move(v));
}

Tensor zeros_param(std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return Tensor::param(std::move(shape), std::vector<double>(n, 0.0));
}

Linear Linear::make(Rng& rng, int in, int out) {
  return {xavier_param(rng, in, out), zeros_param({out})};
}

void Linear::register_params(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".w", w);
  ps.add(prefix + ".b", b);
}

LayerNorm LayerNorm::make(int n) {
  return {Tensor::param({n}, std::vector<double>(n, 1.0)), zeros_param({n})};
}

void LayerNorm::register_params(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".gamma", gamma);
  ps.add(prefix + ".beta", beta);
}

Mlp2 Mlp2::make(Rng& rng, int in, int hidden, int out, bool tanh_out) {
  return {Linear::make(rng, in, hidden), Linear::make(rng, hidden, out), tanh_out};
}

Tensor Mlp2::operator()(const Tensor& x) const {
  Tensor y = l2(relu(l1(x)));
  return tanh_out ? tanh_op(y) : y;
}

void Mlp2::register_params(ParamSet& ps, const std::string& prefix) const {
  l1.register_params(ps, prefix + ".l1");
  l2.register_params(ps, prefix + ".l2");
}

Mlp3 Mlp3::make(Rng& rng, int in, int hidden, int out) {
  return {Linear::make(rng, in, hidden), Linear::make(rng, hidden, hidden),
          Linear::make(rng, hidden, out)};
}

Tensor Mlp3::operator()(const Tensor& x) const {
  return l3(relu(l2(relu(l1(x)))));
}

void Mlp3::register_params(ParamSet& ps, const std::string& prefix) const {
  l1.register_params(ps, prefix + ".l1");
  l2.register_params(ps, prefix + ".l2");
  l3.register_params(ps, prefix + ".l3");
}

MultiHeadAttention MultiHeadAttention::make(Rng& rng, int q_in, int kv_in, int dim,
                                            int heads) {
  if (heads < 1 || dim % heads != 0)
    throw std::invalid_argument("attention dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  MultiHeadAttention m;
  m.wq = Linear::make(rng, q_in, dim);
  m.wk = Linear::make(rng, kv_in, dim);
  m.wv = Linear::make(rng, kv_in, dim);
  m.wo = Linear::make(rng, dim, dim);
  m.heads = heads;
  m.dim = dim;
  return m;
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& k_in,
                                   const Tensor& v_in,
                                   const std::vector<uint8_t>* key_keep) const {
  Tensor q = wq(q_in);
  Tensor k = wk(k_in);
  Tensor v = wv(v_in);
  const int dh = dim / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
    Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
    Tensor vh = heads == 1 ? v : slice(v, 1, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor attn = key_keep ? masked_softmax(scores, 1, *key_keep)
                           : softmax(scores, 1);
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat(1, head_outs);
  return wo(merged);
}

void MultiHeadAttention::register_params(ParamSet& ps, const std::string& prefix) const {
  wq.register_params(ps, prefix + ".wq");
  wk.register_params(ps, prefix + ".wk");
  wv.register_params(ps, prefix + ".wv");
  wo.register_params(ps, prefix + ".wo");
}

EncoderBlock EncoderBlock::make(Rng& rng, int dim, int ffn_hidden, int heads,
                                bool gelu_ffn) {
  EncoderBlock b;
  b.attn = MultiHeadAttention::make(rng, dim, dim, dim, heads);
  b.ln1 = LayerNorm::make(dim);
  b.ff1 = Linear::make(rng, dim, ffn_hidden);
  b.ff2 = Linear::make(rng, ffn_hidden, dim);
  b.ln2 = LayerNorm::make(dim);
  b.gelu_ffn = gelu_ffn;
  return b;
}

Tensor EncoderBlock::forward(const Tensor& x, const std::vector<uint8_t>* key_keep,
                             const Tensor* qk_pos) const {
  Tensor qk = qk_pos ? add(x, *qk_pos) : x;
  Tensor attended = attn.forward(qk, qk, x, key_keep);
  Tensor y = ln1(add(x, attended));
  Tensor hidden = ff1(y);
  hidden = gelu_ffn ? gelu(hidden) : relu(hidden);
  Tensor f = ff2(hidden);
  return ln2(add(y, f));
}

void EncoderBlock::register_params(ParamSet& ps, const std::string& prefix) const {
  attn.register_params(ps, prefix + ".attn");
  ln1.register_params(ps, prefix + ".ln1");
  ff1.register_params(ps, prefix + ".ff1");
  ff2.register_params(ps, prefix + ".ff2");
  ln2.register_params(ps, prefix + ".ln2");
}

Tensor sinusoidal_position_grid(int h, int w, int c) {
  // first half of channels encodes x, second half y; sin/cos interleaved
  std::vector<double> v(static_cast<size_t>(h) * w * c, 0.0);
  const int half = c / 2;
  auto fill_axis = [&](int offset, int span, auto coord_of) {
    const int pairs = span / 2;
    if (pairs == 0) return;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double* row = v.data() + (static_cast<size_t>(y) * w + x) * c + offset;
        const double pos = coord_of(y, x);
        for (int i = 0; i < pairs; ++i) {
          const double freq = std::pow(10000.0, -2.0 * i / span);
          row[2 * i] = std::sin(pos * freq);
          row[2 * i + 1] = std::cos(pos * freq);
        }
      }
  };
  fill_axis(0, half, [](int, int x) { return static_cast<double>(x); });
  fill_axis(half, c - half, [](int y, int) { return static_cast<double>(y); });
  return Tensor::from({h * w, c}, std::move(v));
}

}  // namespace lgseg
