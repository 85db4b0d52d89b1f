#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lgseg/encoders.hpp"
#include "lgseg/rng.hpp"
#include "op_grad_suite.hpp"

using namespace lgseg;
using lgseg_tests::rand_const;

namespace {

TextEncoderConfig small_text_cfg(int vocab_size) {
  TextEncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.c_l = 8;
  cfg.layers = 2;
  cfg.ffn_hidden = 16;
  cfg.heads = 1;
  cfg.t_max = 6;
  return cfg;
}

VisionEncoderConfig small_vision_cfg() {
  VisionEncoderConfig cfg;
  cfg.channels = {8, 12, 16, 20};
  cfg.blocks_per_stage = 1;
  cfg.heads = 1;
  cfg.ffn_mult = 2;
  cfg.c_l = 8;
  return cfg;
}

void zero_gates(VisionEncoder& enc) {
  for (auto& stage : enc.stages) {
    if (!stage.fusion) continue;
    for (Linear* l : {&stage.fusion->gate_v.l2, &stage.fusion->gate_l.l2}) {
      std::fill(l->w.values().begin(), l->w.values().end(), 0.0);
      std::fill(l->b.values().begin(), l->b.values().end(), 0.0);
    }
  }
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("build_vocab is deterministic with sorted ids") {
  Vocab v = Vocab::build({"red circle"});
  REQUIRE(v.size() == 4);
  CHECK(v.id_to_token[0] == "<pad>");
  CHECK(v.id_to_token[1] == "<unk>");
  CHECK(v.id_to_token[2] == "circle");
  CHECK(v.id_to_token[3] == "red");

  Vocab dup = Vocab::build({"red red circle", "circle RED."});
  CHECK(dup.size() == 4);  // duplicates and case/punctuation collapse

  Vocab again = Vocab::build({"red circle"});
  CHECK(again.id_to_token == v.id_to_token);

  CHECK_THROWS_AS(Vocab::build({}), std::invalid_argument);
}

TEST_CASE("tokenize pads, truncates and maps unknowns") {
  Vocab v = Vocab::build({"red circle blue square"});
  Tokenized t = tokenize("red circle", v, 4);
  CHECK(t.T == 2);
  CHECK(t.ids == std::vector<int>{v.id("red"), v.id("circle"), Vocab::kPad, Vocab::kPad});
  CHECK(t.keep == std::vector<uint8_t>{1, 1, 0, 0});

  Tokenized unk = tokenize("purple circle", v, 4);
  CHECK(unk.ids[0] == Vocab::kUnk);

  std::string twenty;
  for (int i = 0; i < 20; ++i) twenty += "red ";
  Tokenized trunc = tokenize(twenty, v, 16);
  CHECK(trunc.T == 16);
  CHECK(static_cast<int>(trunc.ids.size()) == 16);

  CHECK_THROWS_AS(tokenize("  ... ", v, 4), std::invalid_argument);
}

TEST_CASE("encode_text is deterministic and position sensitive") {
  Vocab v = Vocab::build({"red circle blue"});
  Rng rng(0);
  TextEncoder enc = TextEncoder::make(rng, small_text_cfg(v.size()));

  TextFeatures a = enc.forward(tokenize("red", v, 6));
  TextFeatures b = enc.forward(tokenize("red", v, 6));
  CHECK(same_values(a.L, b.L));

  TextFeatures rc = enc.forward(tokenize("red circle", v, 6));
  TextFeatures cr = enc.forward(tokenize("circle red", v, 6));
  bool any_diff = false;
  for (int64_t i = 0; i < rc.L.size() && !any_diff; ++i)
    any_diff = rc.L[i] != cr.L[i];
  CHECK(any_diff);  // learned positions make word order matter
}

TEST_CASE("pad slots never leak into text features") {
  Vocab v = Vocab::build({"red circle blue square"});
  Rng rng(1);
  TextEncoder enc = TextEncoder::make(rng, small_text_cfg(v.size()));

  Tokenized t = tokenize("red circle", v, 6);
  TextFeatures base = enc.forward(t);
  // poke a pad slot with a different id; outputs must be bit-identical
  Tokenized poked = t;
  poked.ids[4] = v.id("square");
  TextFeatures after = enc.forward(poked);
  CHECK(same_values(base.L, after.L));
  // pad rows themselves are zero
  for (int r = t.T; r < 6; ++r)
    for (int c = 0; c < base.L.dim(1); ++c) CHECK(base.L.at(r, c) == 0.0);
}

TEST_CASE("encode_image pyramid shapes follow the stride arithmetic") {
  Vocab v = Vocab::build({"red circle"});
  Rng rng(2);
  TextEncoder text_enc = TextEncoder::make(rng, small_text_cfg(v.size()));
  VisionEncoder vis_enc = VisionEncoder::make(rng, small_vision_cfg());

  TextFeatures text = text_enc.forward(tokenize("red circle", v, 6));
  Tensor img = rand_const(rng, {64, 64, 3}, 0.0, 1.0);
  auto [pyr, fused] = vis_enc.forward(img, text);

  CHECK(pyr.s4.h == 16);
  CHECK(pyr.s4.w == 16);
  CHECK(pyr.s4.feat.shape() == std::vector<int>{256, 8});
  CHECK(pyr.s8.h == 8);
  CHECK(pyr.s8.feat.shape() == std::vector<int>{64, 12});
  CHECK(pyr.s16.h == 4);
  CHECK(pyr.s16.feat.shape() == std::vector<int>{16, 16});
  CHECK(pyr.s32.h == 2);
  CHECK(pyr.s32.feat.shape() == std::vector<int>{4, 20});
  CHECK(fused.L.shape() == text.L.shape());

  Tensor bad = rand_const(rng, {48, 64, 3});
  CHECK_THROWS_AS(vis_enc.forward(bad, text), std::invalid_argument);
}

TEST_CASE("zeroed fusion gates make the pyramid expression independent") {
  Vocab v = Vocab::build({"red circle blue square"});
  Rng rng(3);
  TextEncoder text_enc = TextEncoder::make(rng, small_text_cfg(v.size()));
  VisionEncoder vis_enc = VisionEncoder::make(rng, small_vision_cfg());
  zero_gates(vis_enc);

  Tensor img = rand_const(rng, {32, 32, 3}, 0.0, 1.0);
  auto [pyr_a, la] = vis_enc.forward(img, text_enc.forward(tokenize("red circle", v, 6)));
  auto [pyr_b, lb] = vis_enc.forward(img, text_enc.forward(tokenize("blue square", v, 6)));
  CHECK(same_values(pyr_a.s8.feat, pyr_b.s8.feat));
  CHECK(same_values(pyr_a.s16.feat, pyr_b.s16.feat));
  CHECK(same_values(pyr_a.s32.feat, pyr_b.s32.feat));
}

TEST_CASE("changing one word changes the deepest features") {
  Vocab v = Vocab::build({"red circle blue square"});
  Rng rng(4);
  TextEncoder text_enc = TextEncoder::make(rng, small_text_cfg(v.size()));
  VisionEncoder vis_enc = VisionEncoder::make(rng, small_vision_cfg());

  Tensor img = rand_const(rng, {32, 32, 3}, 0.0, 1.0);
  auto [pyr_a, la] = vis_enc.forward(img, text_enc.forward(tokenize("red circle", v, 6)));
  auto [pyr_b, lb] = vis_enc.forward(img, text_enc.forward(tokenize("blue circle", v, 6)));
  CHECK_FALSE(same_values(pyr_a.s32.feat, pyr_b.s32.feat));
}

TEST_CASE("unidirectional fusion leaves the language stream untouched") {
  Vocab v = Vocab::build({"red circle"});
  Rng rng(5);
  TextEncoder text_enc = TextEncoder::make(rng, small_text_cfg(v.size()));
  VisionEncoderConfig cfg = small_vision_cfg();
  cfg.bidirectional = false;
  VisionEncoder vis_enc = VisionEncoder::make(rng, cfg);

  TextFeatures text = text_enc.forward(tokenize("red circle", v, 6));
  Tensor img = rand_const(rng, {32, 32, 3}, 0.0, 1.0);
  auto [pyr, fused] = vis_enc.forward(img, text);
  CHECK(same_values(fused.L, text.L));
}

TEST_CASE("gradients reach token embeddings and the first patch embedding") {
  Vocab v = Vocab::build({"red circle"});
  Rng rng(6);
  TextEncoder text_enc = TextEncoder::make(rng, small_text_cfg(v.size()));
  VisionEncoder vis_enc = VisionEncoder::make(rng, small_vision_cfg());

  Tensor img = rand_const(rng, {32, 32, 3}, 0.0, 1.0);
  {
    Tape tape;
    TextFeatures text = text_enc.forward(tokenize("red circle", v, 6));
    auto [pyr, fused] = vis_enc.forward(img, text);
    Tensor loss = add(sum(mul(pyr.s32.feat, pyr.s32.feat)),
                      sum(mul(fused.L, fused.L)));
    tape.backward(loss);
  }
  double emb_norm = 0.0;
  for (double g : text_enc.tok_embed.grad()) emb_norm += std::abs(g);
  CHECK(emb_norm > 0.0);
  double patch_norm = 0.0;
  for (double g : vis_enc.stages[0].embed.w.grad()) patch_norm += std::abs(g);
  CHECK(patch_norm > 0.0);
}

TEST_CASE("same seed rebuilds identical encoders") {
  Vocab v = Vocab::build({"red circle"});
  Rng rng_a(9), rng_b(9);
  TextEncoder a = TextEncoder::make(rng_a, small_text_cfg(v.size()));
  TextEncoder b = TextEncoder::make(rng_b, small_text_cfg(v.size()));
  CHECK(same_values(a.tok_embed, b.tok_embed));
  CHECK(same_values(a.blocks[0].attn.wq.w, b.blocks[0].attn.wq.w));
}
