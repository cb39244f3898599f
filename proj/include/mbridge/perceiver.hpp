#pragma once

#include <cstdint>
#include <vector>

#include "mbridge/encoders.hpp"
#include "mbridge/params.hpp"

namespace mbridge {

/// Fixed-length summary of one media input, in the language model's embedding
/// space: [n_queries x d_llm] regardless of the source length.
struct ModalityEmbedding {
  Modality kind;
  Tensor vectors;
};

/// Per-modality learnable query tokens. Every modality served by the system
/// has exactly one matrix; all matrices share n_queries and d_model so the
/// shared resampler consumes them interchangeably.
class QueryBank {
 public:
  Tensor& queries(Modality kind);
  const Tensor& queries(Modality kind) const;
  bool has(Modality kind) const;
  const std::vector<Modality>& kinds() const { return kinds_; }

  int64_t n_queries() const { return n_queries_; }
  int64_t d_model() const { return d_model_; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  friend QueryBank init_query_bank(const std::vector<Modality>& kinds, int64_t n_queries,
                                   int64_t d_model, uint64_t seed);

 private:
  std::vector<Modality> kinds_;
  ParameterSet params_;
  int64_t n_queries_ = 0;
  int64_t d_model_ = 0;
};

/// Per-kind matrices i.i.d. normal(0, 0.02); duplicate kinds rejected.
QueryBank init_query_bank(const std::vector<Modality>& kinds, int64_t n_queries, int64_t d_model,
                          uint64_t seed);

struct PerceiverConfig {
  int64_t n_queries = 32;
  int64_t d_model = 128;
  int64_t d_llm = 128;
  int64_t d_enc = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t ffn_mult = 4;
  uint64_t seed = 903;
};

/// Shared transformer-decoder resampler: one weight set serves every modality;
/// only the query matrices are modality-specific. Fully differentiable into
/// queries and weights; encoder features arrive detached.
class Perceiver {
 public:
  explicit Perceiver(PerceiverConfig config = {});

  ModalityEmbedding perceive(const QueryBank& bank, const EncoderOutput& features) const;

  const PerceiverConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  PerceiverConfig cfg_;
  ParameterSet params_;
};

}  // namespace mbridge
