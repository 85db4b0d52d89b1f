#pragma once

#include <string>
#include <vector>

#include "lgseg/rng.hpp"
#include "lgseg/tensor.hpp"

namespace lgseg {

// Ordered, named view over every trainable tensor of a model; the order is
// the registration order and is what the optimizer and checkpoints rely on.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) { items.push_back({name, t}); }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items.size());
    for (const auto& [n, t] : items) out.push_back(t);
    return out;
  }
  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }
};

// weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero,
// embedding tables normal with std 0.02
Tensor xavier_param(Rng& rng, int fan_in, int fan_out);
Tensor normal_param(Rng& rng, std::vector<int> shape, double stddev = 0.02);
Tensor zeros_param(std::vector<int> shape);

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // out

  static Linear make(Rng& rng, int in, int out);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm make(int n);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// two-layer MLP, ReLU between layers; optional tanh on the output
struct Mlp2 {
  Linear l1, l2;
  bool tanh_out = false;

  static Mlp2 make(Rng& rng, int in, int hidden, int out, bool tanh_out = false);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// three-layer MLP with ReLU on all but the last layer
struct Mlp3 {
  Linear l1, l2, l3;

  static Mlp3 make(Rng& rng, int in, int hidden, int out);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// Scaled dot-product attention with separate projections; scale 1/sqrt(dh).
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int dim = 0;

  static MultiHeadAttention make(Rng& rng, int q_in, int kv_in, int dim, int heads);
  // q_in: M x *, k_in/v_in: N x *; key_keep (length N) masks padded keys
  Tensor forward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const std::vector<uint8_t>* key_keep = nullptr) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// Post-norm transformer encoder block: x = LN(x + attn), x = LN(x + ffn)
struct EncoderBlock {
  MultiHeadAttention attn;
  LayerNorm ln1;
  Linear ff1, ff2;
  LayerNorm ln2;
  bool gelu_ffn = true;

  static EncoderBlock make(Rng& rng, int dim, int ffn_hidden, int heads,
                           bool gelu_ffn = true);
  // qk_pos, when given, is added to the attention query/key input only
  Tensor forward(const Tensor& x, const std::vector<uint8_t>* key_keep = nullptr,
                 const Tensor* qk_pos = nullptr) const;
  void register_params(ParamSet& ps, const std::string& prefix) const;
};

// Fixed 2-D sinusoidal position table, (h*w) x c, row-major over (y, x).
Tensor sinusoidal_position_grid(int h, int w, int c);

}  // namespace lgseg
