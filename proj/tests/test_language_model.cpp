#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mbridge/language_model.hpp"
#include "mbridge/ops.hpp"
#include "mbridge/tokenizer.hpp"

using namespace mbridge;

namespace {

LMConfig tiny_config(DType dt = DType::F32) {
  LMConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.t_max = 64;
  cfg.vocab_size = 64;
  cfg.dtype = dt;
  return cfg;
}

EmbeddingSequence token_sequence(const LanguageModel& lm, const std::vector<int>& ids,
                                 int64_t mask_from = 1) {
  EmbeddingSequence seq;
  seq.embeddings = lm.embed_tokens(ids);
  for (size_t i = 0; i < ids.size(); ++i) {
    seq.positions.push_back(PositionInfo::token(ids[i]));
    seq.loss_mask.push_back(static_cast<int64_t>(i) >= mask_from ? 1 : 0);
  }
  return seq;
}

}  // namespace

TEST_CASE("causality: suffix permutations leave earlier logits unchanged") {
  LanguageModel lm(tiny_config(DType::F64));
  std::vector<int> ids{5, 9, 13, 2, 7, 40, 22, 61};
  std::vector<int> permuted{5, 9, 13, 2, 61, 22, 7, 40};  // same prefix of 4
  auto a = lm.forward(token_sequence(lm, ids));
  auto b = lm.forward(token_sequence(lm, permuted));
  const int64_t v = lm.vocab_size();
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < v; ++c)
      CHECK(a.value_at(static_cast<size_t>(t * v + c)) ==
            doctest::Approx(b.value_at(static_cast<size_t>(t * v + c))).epsilon(1e-12));
}

TEST_CASE("all-soft-prompt sequences are valid inputs") {
  LanguageModel lm(tiny_config());
  Rng rng(3);
  EmbeddingSequence seq;
  seq.embeddings = Tensor::randn({6, 32}, rng, 0.5);
  for (int i = 0; i < 6; ++i) {
    seq.positions.push_back(PositionInfo::soft_prompt(Modality::Audio));
    seq.loss_mask.push_back(0);
  }
  auto logits = lm.forward(seq);
  CHECK(logits.shape() == Shape{6, 64});
}

TEST_CASE("prefix recomputation oracle") {
  LanguageModel lm(tiny_config(DType::F64));
  std::vector<int> ids{1, 2, 3, 5, 8, 13, 21, 34};
  auto full = lm.forward(token_sequence(lm, ids));
  const int64_t v = lm.vocab_size();
  for (size_t p = 1; p <= ids.size(); ++p) {
    std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<long>(p));
    auto part = lm.forward(token_sequence(lm, prefix));
    for (int64_t c = 0; c < v; ++c) {
      const double a = full.value_at(static_cast<size_t>((p - 1) * static_cast<size_t>(v)) +
                                     static_cast<size_t>(c));
      const double b = part.value_at(static_cast<size_t>((p - 1) * static_cast<size_t>(v)) +
                                     static_cast<size_t>(c));
      CHECK(a == doctest::Approx(b).epsilon(1e-5));
    }
  }
}

TEST_CASE("zeroed embedding table gives uniform logits -> ln V loss") {
  LanguageModel lm(tiny_config(DType::F64));
  auto vals = lm.params().tensor("tok_embed").values_mut<double>();
  std::fill(vals.begin(), vals.end(), 0.0);
  auto seq = token_sequence(lm, {4, 17});  // single-token response
  CHECK(lm.sequence_loss(seq).item() == doctest::Approx(std::log(64.0)).epsilon(1e-9));
}

TEST_CASE("sequence loss equals hand-enumerated -log p") {
  LanguageModel lm(tiny_config(DType::F64));
  std::vector<int> ids{10, 20, 30};
  auto seq = token_sequence(lm, ids, /*mask_from=*/1);
  auto logits = lm.forward(seq);
  const int64_t v = lm.vocab_size();

  double expected = 0.0;
  for (int64_t t = 0; t < 2; ++t) {
    double mx = -1e300;
    for (int64_t c = 0; c < v; ++c)
      mx = std::max(mx, logits.value_at(static_cast<size_t>(t * v + c)));
    double denom = 0.0;
    for (int64_t c = 0; c < v; ++c)
      denom += std::exp(logits.value_at(static_cast<size_t>(t * v + c)) - mx);
    const double logp =
        logits.value_at(static_cast<size_t>(t * v + ids[static_cast<size_t>(t + 1)])) - mx -
        std::log(denom);
    expected -= logp;
  }
  expected /= 2.0;
  CHECK(lm.sequence_loss(seq).item() == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("loss mask restricted to response positions ignores other targets") {
  LanguageModel lm(tiny_config(DType::F64));
  // Masked-in positions 3..4 only; position 1..2 are "instruction".
  auto seq = token_sequence(lm, {1, 2, 3, 4, 5}, /*mask_from=*/3);
  auto ids = seq.masked_token_ids();
  CHECK(ids == std::vector<int>{4, 5});
  CHECK_NOTHROW(lm.sequence_loss(seq));
  CHECK_THROWS_AS(lm.sequence_loss(token_sequence(lm, {1, 2, 3}, /*mask_from=*/99)), EmptyLossError);
}

TEST_CASE("soft prompt gradient path carries the training signal") {
  LanguageModel lm(tiny_config());
  lm.freeze();
  Rng rng(5);
  Tensor soft = Tensor::randn({4, 32}, rng, 0.5);
  soft.set_requires_grad(true);

  EmbeddingSequence seq;
  std::vector<int> text{7, 8, 9};
  seq.embeddings = ops::concat_rows({soft, lm.embed_tokens(text)});
  for (int i = 0; i < 4; ++i) {
    seq.positions.push_back(PositionInfo::soft_prompt(Modality::Image));
    seq.loss_mask.push_back(0);
  }
  for (int id : text) {
    seq.positions.push_back(PositionInfo::token(id));
    seq.loss_mask.push_back(1);
  }
  backward(lm.sequence_loss(seq));
  REQUIRE(soft.has_grad());
  bool any = false;
  for (double g : soft.grad_to_vector()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("tied embeddings: scaling an unused row scales its logit column") {
  LanguageModel lm(tiny_config(DType::F64));
  std::vector<int> ids{1, 2, 3};
  auto before = lm.forward(token_sequence(lm, ids));
  const int64_t v = lm.vocab_size();
  const int probe = 50;  // not in the input
  auto table = lm.params().tensor("tok_embed").values_mut<double>();
  for (int64_t c = 0; c < 32; ++c) table[probe * 32 + c] *= 2.0;
  auto after = lm.forward(token_sequence(lm, ids));
  for (int64_t t = 0; t < 3; ++t) {
    CHECK(after.value_at(static_cast<size_t>(t * v + probe)) ==
          doctest::Approx(2.0 * before.value_at(static_cast<size_t>(t * v + probe))).epsilon(1e-9));
    CHECK(after.value_at(static_cast<size_t>(t * v + 1)) ==
          doctest::Approx(before.value_at(static_cast<size_t>(t * v + 1))).epsilon(1e-12));
  }
}

TEST_CASE("generation determinism and strategy reductions") {
  LanguageModel lm(tiny_config());
  auto prefix = token_sequence(lm, {10, 11, 12}, /*mask_from=*/99);
  auto a = lm.generate(prefix, 8, DecodeStrategy::greedy());
  auto b = lm.generate(prefix, 8, DecodeStrategy::greedy());
  CHECK(a == b);
  CHECK(a.size() == 8);

  auto k1 = lm.generate(prefix, 8, DecodeStrategy::top_k(1, 0.7, 99));
  CHECK(k1 == a);

  auto s1 = lm.generate(prefix, 8, DecodeStrategy::top_k(5, 1.3, 123));
  auto s2 = lm.generate(prefix, 8, DecodeStrategy::top_k(5, 1.3, 123));
  CHECK(s1 == s2);
}

TEST_CASE("context overflow is rejected") {
  LanguageModel lm(tiny_config());
  std::vector<int> long_ids(70, 1);
  CHECK_THROWS_AS(lm.forward(token_sequence(lm, long_ids)), ContextOverflowError);
  auto prefix = token_sequence(lm, {1, 2, 3}, 99);
  CHECK_THROWS_AS(lm.generate(prefix, 62, DecodeStrategy::greedy()), ContextOverflowError);
}

TEST_CASE("pretraining memorizes a one-sentence corpus") {
  LMConfig cfg = tiny_config();
  cfg.vocab_size = 261;
  LanguageModel lm(cfg);
  Tokenizer tok;
  const std::string sentence = "the quick brown fox jumps.";
  std::vector<std::vector<int>> corpus{tok.tokenize(sentence)};

  PretrainConfig pc;
  pc.max_steps = 1500;
  pc.batch_size = 2;
  pc.lr = 2e-3;
  pc.loss_threshold = 0.05;
  pc.seed = 7;
  auto report = pretrain_text_lm(lm, corpus, pc);
  CHECK(report.converged);
  CHECK(report.final_loss < 0.05);
  // Random init starts near the uniform-logit limit.
  CHECK(report.initial_loss == doctest::Approx(std::log(261.0)).epsilon(0.1));

  auto ids = tok.tokenize(sentence);
  auto prefix = token_sequence(lm, {ids[0]}, 99);
  auto generated = lm.generate(prefix, static_cast<int64_t>(ids.size()) - 1,
                               DecodeStrategy::greedy(), "");
  std::vector<int> expect(ids.begin() + 1, ids.end());
  CHECK(generated == expect);
}

TEST_CASE("pretraining is bitwise deterministic under a fixed seed") {
  Tokenizer tok;
  std::vector<std::vector<int>> corpus{tok.tokenize("aba cab."), tok.tokenize("bac abc.")};
  PretrainConfig pc;
  pc.max_steps = 40;
  pc.batch_size = 2;
  pc.seed = 11;
  pc.loss_threshold = 0.0;  // never converges; runs all steps

  LMConfig cfg = tiny_config();
  cfg.vocab_size = 261;
  LanguageModel a(cfg), b(cfg);
  pretrain_text_lm(a, corpus, pc);
  pretrain_text_lm(b, corpus, pc);
  CHECK(a.params().raw_bytes() == b.params().raw_bytes());
}
