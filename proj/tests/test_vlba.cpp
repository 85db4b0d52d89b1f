#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lgseg/rng.hpp"
#include "lgseg/vlba.hpp"
#include "op_grad_suite.hpp"

using namespace lgseg;
using lgseg_tests::rand_const;
using lgseg_tests::rand_param;

namespace {

Linear make_linear(std::vector<int> wshape, std::vector<double> w,
                   std::vector<double> b) {
  const int nb = static_cast<int>(b.size());
  return {Tensor::param(std::move(wshape), std::move(w)),
          Tensor::param({nb}, std::move(b))};
}

Linear identity2() { return make_linear({2, 2}, {1, 0, 0, 1}, {0, 0}); }

void zero_linear(Linear& l) {
  std::fill(l.w.values().begin(), l.w.values().end(), 0.0);
  std::fill(l.b.values().begin(), l.b.values().end(), 0.0);
}

TextFeatures make_text(Tensor l, std::vector<uint8_t> keep) {
  int t = 0;
  for (uint8_t k : keep) t += k ? 1 : 0;
  return TextFeatures{std::move(l), std::move(keep), t};
}

}  // namespace

TEST_CASE("single pixel, single word, hand-computed through every equation") {
  // C_v = C_l = 2, V = [1,0], L = [1,0], all projections identity.
  // A = V L^T / sqrt(2) = 1/sqrt(2); softmax over the one word -> 1
  // V_r = w1(1 * L_v) = [1,0];  L_r = w2(1 * V_v) = [1,0]
  // fuse = sum of halves of cat(x, r): V_m = [2,0], L_m = [2,0]
  // gate = constant 0.5:  V' = [1,0] + [2,0]*0.5 = [2,0], same for L'
  VLBAParams p;
  p.c_v = 2;
  p.c_l = 2;
  p.heads = 1;
  p.w_vq = identity2();
  p.w_vv = identity2();
  p.w_lk = identity2();
  p.w_lv = identity2();
  p.w1 = identity2();
  p.w2 = identity2();
  // 4 -> 2 -> 2, first layer adds the two halves, second layer passes through
  p.fuse_v = Mlp2{make_linear({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1}, {0, 0}), identity2()};
  p.fuse_l = Mlp2{make_linear({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1}, {0, 0}), identity2()};
  // gate ignores its input and emits 0.5
  p.gate_v = Mlp2{make_linear({2, 2}, {0, 0, 0, 0}, {0, 0}),
                  make_linear({2, 2}, {0, 0, 0, 0}, {0.5, 0.5})};
  p.gate_l = Mlp2{make_linear({2, 2}, {0, 0, 0, 0}, {0, 0}),
                  make_linear({2, 2}, {0, 0, 0, 0}, {0.5, 0.5})};

  Tensor v = Tensor::from({1, 2}, {1, 0});
  TextFeatures l = make_text(Tensor::from({1, 2}, {1, 0}), {1});
  auto [v_out, l_out] = vlba_forward(v, l, p);
  CHECK(std::abs(v_out[0] - 2.0) < 1e-9);
  CHECK(std::abs(v_out[1] - 0.0) < 1e-9);
  CHECK(std::abs(l_out.L[0] - 2.0) < 1e-9);
  CHECK(std::abs(l_out.L[1] - 0.0) < 1e-9);
}

TEST_CASE("zeroed gate output layers reduce the module to the identity") {
  Rng rng(7);
  VLBAParams p = VLBAParams::make(rng, 6, 4);
  zero_linear(p.gate_v.l2);
  zero_linear(p.gate_l.l2);
  Tensor v = rand_const(rng, {9, 6});
  TextFeatures l = make_text(rand_const(rng, {3, 4}), {1, 1, 0});
  auto [v_out, l_out] = vlba_forward(v, l, p);
  for (int64_t i = 0; i < v.size(); ++i) CHECK(v_out[i] == v[i]);
  for (int64_t i = 0; i < l.L.size(); ++i) CHECK(l_out.L[i] == l.L[i]);
}

TEST_CASE("padding rows neither change V' nor the real rows of L'") {
  Rng rng(11);
  VLBAParams p = VLBAParams::make(rng, 4, 4);
  Tensor v = rand_const(rng, {4, 4});
  std::vector<double> word = {0.3, -0.2, 0.9, 0.5};

  // T_max = 1 with the single real word
  std::vector<double> l1 = word;
  auto [v1, lo1] = vlba_forward(v, make_text(Tensor::from({1, 4}, l1), {1}), p);

  // T_max = 3, same word plus two junk pad rows
  std::vector<double> l3 = word;
  for (int i = 0; i < 8; ++i) l3.push_back(rng.uniform(-5.0, 5.0));
  auto [v3, lo3] = vlba_forward(v, make_text(Tensor::from({3, 4}, l3), {1, 0, 0}), p);

  for (int64_t i = 0; i < v.size(); ++i) CHECK(v1[i] == v3[i]);
  for (int j = 0; j < 4; ++j) CHECK(lo1.L.at(0, j) == lo3.L.at(0, j));
}

TEST_CASE("pad-only text is rejected as degenerate") {
  Rng rng(3);
  VLBAParams p = VLBAParams::make(rng, 4, 4);
  Tensor v = rand_const(rng, {2, 4});
  CHECK_THROWS_AS(vlba_forward(v, make_text(rand_const(rng, {2, 4}), {0, 0}), p),
                  std::runtime_error);
}

TEST_CASE("unidirectional path matches the V side of the full module") {
  Rng rng(21);
  VLBAParams p = VLBAParams::make(rng, 6, 4);
  Tensor v = rand_const(rng, {9, 6});
  TextFeatures l = make_text(rand_const(rng, {3, 4}), {1, 1, 1});
  auto [v_full, l_full] = vlba_forward(v, l, p);
  Tensor v_uni = unidirectional_forward(v, l, p);
  for (int64_t i = 0; i < v.size(); ++i) CHECK(v_uni[i] == v_full[i]);
}

TEST_CASE("language still receives gradient through the unidirectional path") {
  Rng rng(23);
  VLBAParams p = VLBAParams::make(rng, 8, 8);
  Tensor v = rand_const(rng, {6, 8});
  Tensor l_mat = rand_param(rng, {2, 8});
  TextFeatures l = make_text(l_mat, {1, 1});
  {
    Tape tape;
    Tensor v_out = unidirectional_forward(v, l, p);
    tape.backward(sum(mul(v_out, v_out)));
  }
  double norm = 0.0;
  for (double g : l_mat.grad()) norm += std::abs(g);
  CHECK(norm > 0.0);
  double wlv_norm = 0.0;
  for (double g : p.w_lv.w.grad()) wlv_norm += std::abs(g);
  CHECK(wlv_norm > 0.0);
}

TEST_CASE("attention rows are stochastic in both directions") {
  Rng rng(31);
  VLBAParams p = VLBAParams::make(rng, 4, 4);
  Tensor v = rand_const(rng, {6, 4});
  TextFeatures l = make_text(rand_const(rng, {3, 4}), {1, 1, 0});
  // recompute the shared affinity exactly as the module does
  Tensor affinity = scale(matmul(p.w_vq(v), transpose(p.w_lk(l.L))), 1.0 / 2.0);
  Tensor words = masked_softmax(affinity, 1, l.keep);
  for (int r = 0; r < 6; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += words.at(r, c);
    CHECK(std::abs(s - 1.0) <= 1e-12);
    CHECK(words.at(r, 2) == 0.0);  // pad column
  }
  Tensor pixels = softmax(transpose(affinity), 1);
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += pixels.at(r, c);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("full-module gradient check on a 4-pixel 2-word instance") {
  Rng rng(5);
  VLBAParams p = VLBAParams::make(rng, 4, 4);
  Tensor v = rand_param(rng, {4, 4});
  Tensor l_mat = rand_param(rng, {2, 4});
  TextFeatures l = make_text(l_mat, {1, 1});

  ParamSet ps;
  p.register_params(ps, "vlba");
  ps.add("v", v);
  ps.add("l", l_mat);
  std::vector<Tensor> params = ps.tensors();
  std::vector<std::pair<int, int64_t>> coords;
  for (size_t i = 0; i < params.size(); ++i)
    for (int64_t j = 0; j < params[i].size(); ++j) coords.push_back({static_cast<int>(i), j});

  auto f = [&]() {
    auto [v_out, l_out] = vlba_forward(v, l, p);
    return add(sum(mul(v_out, v_out)), sum(mul(l_out.L, l_out.L)));
  };
  const double err = grad_check_params(f, params, coords);
  CHECK(err < 1e-4);
}

TEST_CASE("multi-head variant stays consistent") {
  Rng rng(41);
  VLBAParams p = VLBAParams::make(rng, 8, 4, /*heads=*/2);
  Tensor v = rand_const(rng, {5, 8});
  TextFeatures l = make_text(rand_const(rng, {3, 4}), {1, 1, 1});
  auto [v_out, l_out] = vlba_forward(v, l, p);
  CHECK(v_out.shape() == std::vector<int>{5, 8});
  CHECK(l_out.L.shape() == std::vector<int>{3, 4});
  Tensor v_uni = unidirectional_forward(v, l, p);
  for (int64_t i = 0; i < v.size(); ++i) CHECK(v_uni[i] == v_out[i]);
}
