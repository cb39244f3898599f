#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbridge/media.hpp"
#include "mbridge/params.hpp"
#include "mbridge/tensor.hpp"

namespace mbridge {

struct LMConfig {
  int64_t d_model = 128;
  int64_t n_layers = 4;
  int64_t n_heads = 4;
  int64_t t_max = 512;
  int64_t ffn_mult = 4;
  int vocab_size = 261;
  uint64_t seed = 904;
  DType dtype = DType::F32;
};

/// Where one sequence position came from: a modality soft prompt or a token.
struct PositionInfo {
  enum class Source { SoftPrompt, Token };
  Source source = Source::Token;
  Modality modality = Modality::Image;  // meaningful for SoftPrompt
  int token_id = -1;                    // meaningful for Token

  static PositionInfo soft_prompt(Modality kind) {
    return PositionInfo{Source::SoftPrompt, kind, -1};
  }
  static PositionInfo token(int id) { return PositionInfo{Source::Token, Modality::Image, id}; }
  bool is_token() const { return source == Source::Token; }
};

/// Interleaved soft-prompt / token-embedding input with per-position
/// provenance and loss mask. loss_mask marks target positions; it is never
/// true on a soft-prompt position.
struct EmbeddingSequence {
  Tensor embeddings;  // [T x d]
  std::vector<PositionInfo> positions;
  std::vector<uint8_t> loss_mask;

  int64_t length() const { return static_cast<int64_t>(positions.size()); }
  void validate() const;
  /// Token ids of the masked-in positions, in order.
  std::vector<int> masked_token_ids() const;
};

struct DecodeStrategy {
  enum class Kind { Greedy, TopK };
  Kind kind = Kind::Greedy;
  int k = 1;
  double temperature = 1.0;
  uint64_t seed = 0;

  static DecodeStrategy greedy() { return DecodeStrategy{}; }
  static DecodeStrategy top_k(int k, double temperature, uint64_t seed) {
    return DecodeStrategy{Kind::TopK, k, temperature, seed};
  }
};

/// Decoder-only causal LM with tied input/output embeddings and learned
/// positional embeddings. Soft-prompt positions receive positional embeddings
/// exactly like token positions. Frozen during bridge training.
class LanguageModel {
 public:
  explicit LanguageModel(LMConfig config = {});

  /// Causal logits [T x V]; defined at every position, soft prompts included.
  Tensor forward(const EmbeddingSequence& seq) const;

  /// Rows of the (tied) embedding table; differentiable into the table.
  Tensor embed_tokens(const std::vector<int>& ids) const;

  /// Next-token cross entropy: position t predicts the token at t+1 wherever
  /// loss_mask[t+1] is set.
  Tensor sequence_loss(const EmbeddingSequence& seq) const;

  /// Autoregressive decoding from the prefix. Stops after max_new tokens or
  /// when the decoded text ends with stop_text (stripped from the result).
  std::vector<int> generate(const EmbeddingSequence& prefix, int64_t max_new,
                            const DecodeStrategy& strategy = {},
                            const std::string& stop_text = "###") const;

  void freeze();
  bool frozen() const { return params_.all_frozen(); }

  const LMConfig& config() const { return cfg_; }
  int64_t d_model() const { return cfg_.d_model; }
  int64_t t_max() const { return cfg_.t_max; }
  int vocab_size() const { return cfg_.vocab_size; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  LMConfig cfg_;
  ParameterSet params_;
};

struct PretrainConfig {
  int64_t max_steps = 3000;
  int64_t batch_size = 8;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;
  double loss_threshold = 0.05;
  int64_t patience = 20;  // threshold must hold this many consecutive steps
  uint64_t seed = 905;
  int64_t log_interval = 200;
};

struct PretrainReport {
  bool converged = false;
  double final_loss = 0.0;
  int64_t steps = 0;
  double initial_loss = 0.0;
};

/// Next-token training over a token-id corpus until the smoothed train loss
/// stays under the configured threshold (or max_steps). The caller freezes the
/// result; bridge training never touches these weights again.
PretrainReport pretrain_text_lm(LanguageModel& lm, const std::vector<std::vector<int>>& corpus,
                                const PretrainConfig& config);

}  // namespace mbridge
