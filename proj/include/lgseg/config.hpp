#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace lgseg {

// Flat key = value configuration covering the model, optimizer, and data
// generator. Unknown keys are rejected so typos fail loudly.
struct Config {
  // model widths
  int image_size = 64;
  int t_max = 24;
  std::array<int, 4> vis_channels = {24, 48, 72, 96};
  int vis_blocks = 1;
  int vis_heads = 1;
  int vis_ffn_mult = 2;
  int text_layers = 2;
  int c_l = 48;
  int text_ffn = 96;
  int text_heads = 1;
  int c_decoder = 80;
  int decoder_ffn = 160;
  int decoder_heads = 1;
  int n_decoder_layers = 6;
  int c_o = 48;
  int gen_ffn = 96;
  int integration_hidden = 32;
  int vlba_heads = 1;

  // query mode and fusion flags
  std::string mode = "linguistic";  // linguistic | learnable
  int num_queries = 1;              // K, learnable mode
  std::string l2va_query = "word";  // word | sentence
  std::string fusion = "vlba";      // vlba | unidirectional
  bool l2va = true;
  bool v2la = true;
  std::string gate_act = "linear";  // linear | tanh
  bool reuse_l = true;

  // optimizer and schedule
  double lr = 5e-5;
  double weight_decay = 0.01;
  double poly_power = 0.9;
  int epochs = 30;
  int batch_size = 8;
  uint64_t seed = 0;
  int threads = 1;

  // dataset generation
  int train_size = 2000;
  int val_size = 200;
  int test_size = 200;

  void validate() const;  // throws std::invalid_argument

  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text);
  std::string to_text() const;  // canonical form, fixed key order
  uint64_t hash() const;
};

}  // namespace lgseg
