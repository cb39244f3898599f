#include "mbridge/language_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mbridge/log.hpp"
#include "mbridge/nn.hpp"
#include "mbridge/ops.hpp"

namespace mbridge {

void EmbeddingSequence::validate() const {
  if (!embeddings.defined() || embeddings.rank() != 2)
    throw ShapeError("embedding sequence: embeddings must be [T x d]");
  const auto t = static_cast<size_t>(embeddings.dim(0));
  if (positions.size() != t || loss_mask.size() != t)
    throw ShapeError("embedding sequence: provenance/mask length mismatch");
  for (size_t i = 0; i < t; ++i) {
    if (loss_mask[i] && !positions[i].is_token())
      throw ConfigError("embedding sequence: loss mask set on a soft-prompt position");
    if (positions[i].is_token() && positions[i].token_id < 0)
      throw ConfigError("embedding sequence: token position without an id");
  }
}

std::vector<int> EmbeddingSequence::masked_token_ids() const {
  std::vector<int> ids;
  for (size_t i = 0; i < positions.size(); ++i)
    if (loss_mask[i]) ids.push_back(positions[i].token_id);
  return ids;
}

LanguageModel::LanguageModel(LMConfig config) : cfg_(config) {
  Rng rng(cfg_.seed);
  params_.add("tok_embed", Tensor::randn({cfg_.vocab_size, cfg_.d_model}, rng, 0.02, cfg_.dtype));
  params_.add("pos_embed", Tensor::randn({cfg_.t_max, cfg_.d_model}, rng, 0.02, cfg_.dtype));
  for (int64_t l = 0; l < cfg_.n_layers; ++l)
    nn::init_self_block(params_, "block" + std::to_string(l), cfg_.d_model, cfg_.ffn_mult, rng,
                        0.02, false, cfg_.dtype);
  nn::init_norm(params_, "final_norm", cfg_.d_model, false, cfg_.dtype);
}

Tensor LanguageModel::embed_tokens(const std::vector<int>& ids) const {
  return ops::embedding_rows(params_.tensor("tok_embed"), ids);
}

Tensor LanguageModel::forward(const EmbeddingSequence& seq) const {
  seq.validate();
  const int64_t t = seq.length();
  if (t > cfg_.t_max)
    throw ContextOverflowError("forward: sequence length " + std::to_string(t) +
                               " exceeds context " + std::to_string(cfg_.t_max));
  if (seq.embeddings.dim(1) != cfg_.d_model)
    throw ShapeError("forward: embedding width " + std::to_string(seq.embeddings.dim(1)) +
                     " does not match model width " + std::to_string(cfg_.d_model));

  Tensor x = ops::add(seq.embeddings, ops::slice_rows(params_.tensor("pos_embed"), 0, t));
  const ops::AttentionMask causal = ops::AttentionMask::causal(t);
  for (int64_t l = 0; l < cfg_.n_layers; ++l)
    x = nn::self_block(params_, "block" + std::to_string(l), x, cfg_.n_heads, &causal);
  x = nn::norm(params_, "final_norm", x);
  // Tied output head: logits = h . E^T.
  return ops::matmul(x, ops::transpose(params_.tensor("tok_embed")));
}

Tensor LanguageModel::sequence_loss(const EmbeddingSequence& seq) const {
  const int64_t t = seq.length();
  if (t < 2) throw EmptyLossError("sequence_loss: sequence too short to form targets");
  Tensor logits = forward(seq);
  // Position i predicts position i+1; shift targets/mask left by one.
  std::vector<int> targets(static_cast<size_t>(t - 1), 0);
  std::vector<uint8_t> mask(static_cast<size_t>(t - 1), 0);
  for (int64_t i = 0; i + 1 < t; ++i) {
    const auto& next = seq.positions[static_cast<size_t>(i + 1)];
    if (seq.loss_mask[static_cast<size_t>(i + 1)] && next.is_token()) {
      targets[static_cast<size_t>(i)] = next.token_id;
      mask[static_cast<size_t>(i)] = 1;
    }
  }
  return ops::cross_entropy_masked(ops::slice_rows(logits, 0, t - 1), targets, mask);
}

namespace {

int pick_token(const std::vector<double>& row, const DecodeStrategy& strategy, Rng& rng,
               int byte_vocab_end) {
  // Specials are never sampled: generated ids must detokenize to plain bytes.
  std::vector<int> order(static_cast<size_t>(byte_vocab_end));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return row[static_cast<size_t>(a)] > row[static_cast<size_t>(b)]; });
  if (strategy.kind == DecodeStrategy::Kind::Greedy || strategy.k <= 1) return order[0];

  const int k = std::min<int>(strategy.k, byte_vocab_end);
  const double tau = strategy.temperature > 0 ? strategy.temperature : 1.0;
  const double top = row[static_cast<size_t>(order[0])];
  std::vector<double> weights(static_cast<size_t>(k));
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    weights[static_cast<size_t>(i)] = std::exp((row[static_cast<size_t>(order[i])] - top) / tau);
    total += weights[static_cast<size_t>(i)];
  }
  double u = rng.uniform() * total;
  for (int i = 0; i < k; ++i) {
    u -= weights[static_cast<size_t>(i)];
    if (u <= 0.0) return order[static_cast<size_t>(i)];
  }
  return order[static_cast<size_t>(k - 1)];
}

}  // namespace

std::vector<int> LanguageModel::generate(const EmbeddingSequence& prefix, int64_t max_new,
                                         const DecodeStrategy& strategy,
                                         const std::string& stop_text) const {
  prefix.validate();
  if (prefix.length() + max_new > cfg_.t_max)
    throw ContextOverflowError("generate: prefix " + std::to_string(prefix.length()) + " + " +
                               std::to_string(max_new) + " new tokens exceeds context " +
                               std::to_string(cfg_.t_max));

  autodiff::NoGradGuard no_grad;
  Rng rng(strategy.seed);

  EmbeddingSequence seq;
  seq.embeddings = prefix.embeddings;
  seq.positions = prefix.positions;
  seq.loss_mask.assign(prefix.loss_mask.size(), 0);

  std::vector<int> generated;
  std::string text;
  // Byte-level vocab: specials sit at the top of the table and are excluded.
  const int byte_vocab_end = std::min(cfg_.vocab_size, 256);
  for (int64_t step = 0; step < max_new; ++step) {
    Tensor logits = forward(seq);
    const int64_t t = seq.length();
    std::vector<double> row(static_cast<size_t>(cfg_.vocab_size));
    for (int v = 0; v < cfg_.vocab_size; ++v)
      row[static_cast<size_t>(v)] = logits.value_at(static_cast<size_t>((t - 1) * cfg_.vocab_size + v));
    const int token = pick_token(row, strategy, rng, byte_vocab_end);
    generated.push_back(token);
    text.push_back(static_cast<char>(static_cast<unsigned char>(token)));

    if (!stop_text.empty() && text.size() >= stop_text.size() &&
        text.compare(text.size() - stop_text.size(), stop_text.size(), stop_text) == 0) {
      generated.resize(generated.size() - stop_text.size());
      break;
    }

    seq.embeddings = ops::concat_rows({seq.embeddings, embed_tokens({token})});
    seq.positions.push_back(PositionInfo::token(token));
    seq.loss_mask.push_back(0);
  }
  return generated;
}

void LanguageModel::freeze() { params_.freeze_all(); }

PretrainReport pretrain_text_lm(LanguageModel& lm, const std::vector<std::vector<int>>& corpus,
                                const PretrainConfig& config) {
  if (corpus.empty()) throw ConfigError("pretrain: empty corpus");
  for (const auto& line : corpus)
    if (line.size() < 2 || static_cast<int64_t>(line.size()) > lm.t_max())
      throw ConfigError("pretrain: corpus lines must have 2..t_max tokens");

  AdamW opt(AdamWConfig{.lr = config.lr, .weight_decay = config.weight_decay});
  const size_t n = corpus.size();
  PretrainReport report;

  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  int64_t perm_epoch = -1;

  double smoothed = -1.0;
  int64_t steady = 0;
  for (int64_t step = 0; step < config.max_steps; ++step) {
    // Deterministic epoch shuffles: the permutation is a pure function of
    // (seed, epoch), so runs and resumes see identical batch order.
    const int64_t cursor = step * config.batch_size;
    const int64_t epoch = cursor / static_cast<int64_t>(n);
    if (epoch != perm_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng shuffle_rng(Rng::mix(config.seed, static_cast<uint64_t>(epoch)));
      shuffle_rng.shuffle(perm);
      perm_epoch = epoch;
    }

    lm.params().zero_grad();
    double batch_loss = 0.0;
    int64_t batch_tokens = 0;
    std::vector<std::pair<Tensor, int64_t>> losses;
    for (int64_t b = 0; b < config.batch_size; ++b) {
      const auto& line = corpus[perm[static_cast<size_t>((cursor + b) % static_cast<int64_t>(n))]];
      EmbeddingSequence seq;
      seq.embeddings = lm.embed_tokens(line);
      for (int id : line) seq.positions.push_back(PositionInfo::token(id));
      seq.loss_mask.assign(line.size(), 1);
      seq.loss_mask[0] = 0;  // nothing predicts position 0
      Tensor loss = lm.sequence_loss(seq);
      const int64_t tokens = static_cast<int64_t>(line.size()) - 1;
      losses.emplace_back(loss, tokens);
      batch_tokens += tokens;
    }
    for (auto& [loss, tokens] : losses) {
      const double weight = static_cast<double>(tokens) / static_cast<double>(batch_tokens);
      backward(loss, weight);
      batch_loss += loss.item() * weight;
    }
    clip_grad_norm({&lm.params()}, config.max_grad_norm);
    opt.step({&lm.params()});

    if (step == 0) report.initial_loss = batch_loss;
    smoothed = smoothed < 0 ? batch_loss : 0.9 * smoothed + 0.1 * batch_loss;
    report.final_loss = smoothed;
    report.steps = step + 1;
    if (config.log_interval > 0 && step % config.log_interval == 0)
      logging::debug("pretrain step " + std::to_string(step) + " loss " + std::to_string(batch_loss));

    steady = smoothed < config.loss_threshold ? steady + 1 : 0;
    if (steady >= config.patience) {
      report.converged = true;
      break;
    }
  }
  return report;
}

}  // namespace mbridge
