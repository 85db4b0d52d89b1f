#pragma once

// Finite-difference checks for every differentiable op, shared between the
// unit tests and the acceptance suite. Each entry builds a small random
// problem from the given seed and returns grad_check's max relative error.

#include <string>
#include <utility>
#include <vector>

#include "lgseg/rng.hpp"
#include "lgseg/tensor.hpp"

namespace lgseg_tests {

using lgseg::Rng;
using lgseg::Tensor;

inline Tensor rand_param(Rng& rng, std::vector<int> shape, double lo = -1.0,
                         double hi = 1.0) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::param(std::move(shape), std::move(v));
}

inline Tensor rand_const(Rng& rng, std::vector<int> shape, double lo = -1.0,
                         double hi = 1.0) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

// values bounded away from zero, for kinked activations
inline Tensor rand_param_offzero(Rng& rng, std::vector<int> shape, double margin = 0.05) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) {
    double m = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor::param(std::move(shape), std::move(v));
}

// Runs every op's gradient check for one seed. Returns (name, max rel err).
inline std::vector<std::pair<std::string, double>> run_op_grad_suite(uint64_t seed) {
  namespace lg = lgseg;
  std::vector<std::pair<std::string, double>> out;
  Rng rng(seed);

  auto quad = [](const Tensor& y) { return lg::sum(lg::mul(y, y)); };

  {
    Tensor b = rand_const(rng, {4, 5});
    Tensor x = rand_param(rng, {3, 4});
    out.emplace_back("matmul_lhs", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::matmul(t, b)); }, x));
  }
  {
    Tensor a = rand_const(rng, {3, 4});
    Tensor x = rand_param(rng, {4, 5});
    out.emplace_back("matmul_rhs", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::matmul(a, t)); }, x));
  }
  {
    Tensor c = rand_const(rng, {4, 5});
    Tensor x = rand_param(rng, {4, 5});
    out.emplace_back("add", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::add(t, c)); }, x));
    out.emplace_back("sub", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::sub(c, t)); }, x));
    out.emplace_back("mul_both_sides", lg::grad_check(
        [&](const Tensor& t) { return lg::sum(lg::mul(t, t)); }, x));
    out.emplace_back("scale", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::scale(t, -1.7)); }, x));
  }
  {
    Tensor x = rand_param(rng, {4, 3});
    Tensor v = rand_param(rng, {3});
    Tensor xc = rand_const(rng, {4, 3});
    out.emplace_back("add_rowvec_x", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::add_rowvec(t, v)); }, x));
    out.emplace_back("add_rowvec_v", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::add_rowvec(xc, t)); }, v));
  }
  {
    Tensor x = rand_param_offzero(rng, {3, 5});
    out.emplace_back("relu", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::relu(t)); }, x));
    Tensor x2 = rand_param_offzero(rng, {3, 5});
    out.emplace_back("gelu", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::gelu(t)); }, x2));
  }
  {
    Tensor x = rand_param(rng, {3, 5});
    out.emplace_back("sigmoid", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::sigmoid(t)); }, x));
    out.emplace_back("tanh", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::tanh_op(t)); }, x));
  }
  {
    Tensor x = rand_param(rng, {3, 4}, 0.2, 2.0);
    out.emplace_back("log", lg::grad_check(
        [&](const Tensor& t) { return lg::sum(lg::log_op(t)); }, x));
  }
  {
    Tensor m = rand_const(rng, {3, 4});
    Tensor x = rand_param(rng, {3, 4});
    out.emplace_back("softmax_axis1", lg::grad_check(
        [&](const Tensor& t) { return lg::sum(lg::mul(lg::softmax(t, 1), m)); }, x));
    out.emplace_back("softmax_axis0", lg::grad_check(
        [&](const Tensor& t) { return lg::sum(lg::mul(lg::softmax(t, 0), m)); }, x));
    std::vector<uint8_t> keep = {1, 0, 1, 1};
    out.emplace_back("masked_softmax_axis1", lg::grad_check(
        [&](const Tensor& t) {
          return lg::sum(lg::mul(lg::masked_softmax(t, 1, keep), m));
        }, x));
    std::vector<uint8_t> keep0 = {1, 1, 0};
    out.emplace_back("masked_softmax_axis0", lg::grad_check(
        [&](const Tensor& t) {
          return lg::sum(lg::mul(lg::masked_softmax(t, 0, keep0), m));
        }, x));
  }
  {
    Tensor x = rand_param(rng, {3, 4});
    out.emplace_back("transpose", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::transpose(t)); }, x));
    out.emplace_back("reshape", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::reshape(t, {2, 6})); }, x));
    out.emplace_back("sum", lg::grad_check(
        [&](const Tensor& t) { return lg::sum(t); }, x));
    out.emplace_back("mean", lg::grad_check(
        [&](const Tensor& t) { return lg::mean(lg::mul(t, t)); }, x));
  }
  {
    Tensor other = rand_const(rng, {2, 4});
    Tensor x = rand_param(rng, {3, 4});
    out.emplace_back("concat_axis0", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::concat(0, {t, other})); }, x));
    Tensor other1 = rand_const(rng, {3, 2});
    out.emplace_back("concat_axis1", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::concat(1, {other1, t})); }, x));
    out.emplace_back("slice_axis0", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::slice(t, 0, 1, 2)); }, x));
    out.emplace_back("slice_axis1", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::slice(t, 1, 0, 3)); }, x));
  }
  {
    Tensor x = rand_param(rng, {4, 3});
    Tensor w = rand_param(rng, {3, 2});
    Tensor b = rand_param(rng, {2});
    Tensor xc = rand_const(rng, {4, 3});
    Tensor wc = rand_const(rng, {3, 2});
    out.emplace_back("linear_x", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::linear(t, wc, b)); }, x));
    out.emplace_back("linear_w", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::linear(xc, t, b)); }, w));
    out.emplace_back("linear_b", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::linear(xc, wc, t)); }, b));
  }
  {
    Tensor x = rand_param(rng, {4, 6});
    Tensor gamma = rand_param(rng, {6}, 0.5, 1.5);
    Tensor beta = rand_param(rng, {6});
    Tensor xc = rand_const(rng, {4, 6});
    out.emplace_back("layer_norm_x", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::layer_norm(t, gamma, beta)); }, x));
    out.emplace_back("layer_norm_gamma", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::layer_norm(xc, t, beta)); }, gamma));
    out.emplace_back("layer_norm_beta", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::layer_norm(xc, gamma, t)); }, beta));
  }
  {
    Tensor x = rand_param(rng, {4, 3});
    std::vector<uint8_t> keep = {1, 1, 0, 1};
    out.emplace_back("masked_mean_pool_axis0", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::masked_mean_pool(t, keep, 0)); }, x));
    std::vector<uint8_t> keepc = {0, 1, 1};
    out.emplace_back("masked_mean_pool_axis1", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::masked_mean_pool(t, keepc, 1)); }, x));
    out.emplace_back("zero_rows", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::zero_rows(t, keep)); }, x));
  }
  {
    Tensor x = rand_param(rng, {4, 5, 2});
    out.emplace_back("bilinear_resize_up", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::bilinear_resize(t, 7, 8)); }, x));
    out.emplace_back("bilinear_resize_down", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::bilinear_resize(t, 2, 3)); }, x));
  }
  {
    Tensor x = rand_param(rng, {16, 3});
    out.emplace_back("merge_patches", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::merge_patches(t, 4, 4, 2)); }, x));
  }
  {
    Tensor table = rand_param(rng, {6, 4});
    std::vector<int> ids = {2, 0, 2, 5};  // repeated id exercises accumulation
    out.emplace_back("embedding_lookup", lg::grad_check(
        [&](const Tensor& t) { return quad(lg::embedding_lookup(t, ids)); }, table));
  }
  {
    Tensor z = rand_param(rng, {2, 3}, -2.0, 2.0);
    std::vector<double> y(6);
    for (auto& t : y) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
    out.emplace_back("bce_with_logits_mean", lg::grad_check(
        [&](const Tensor& t) { return lg::bce_with_logits_mean(t, y); }, z));
  }
  return out;
}

}  // namespace lgseg_tests
