#include "mbridge/perceiver.hpp"

#include <string>

#include "mbridge/log.hpp"
#include "mbridge/nn.hpp"
#include "mbridge/ops.hpp"

namespace mbridge {

namespace {
std::string query_param_name(Modality kind) {
  return std::string("queries.") + modality_name(kind);
}
}  // namespace

Tensor& QueryBank::queries(Modality kind) { return params_.tensor(query_param_name(kind)); }

const Tensor& QueryBank::queries(Modality kind) const {
  return params_.tensor(query_param_name(kind));
}

bool QueryBank::has(Modality kind) const { return params_.contains(query_param_name(kind)); }

QueryBank init_query_bank(const std::vector<Modality>& kinds, int64_t n_queries, int64_t d_model,
                          uint64_t seed) {
  if (n_queries < 1) throw ConfigError("query bank: n_queries must be >= 1");
  QueryBank bank;
  bank.n_queries_ = n_queries;
  bank.d_model_ = d_model;
  Rng rng(seed);
  for (Modality kind : kinds) {
    if (bank.has(kind))
      throw ConfigError(std::string("query bank: duplicate kind ") + modality_name(kind));
    bank.kinds_.push_back(kind);
    bank.params_.add(query_param_name(kind), Tensor::randn({n_queries, d_model}, rng, 0.02));
  }
  return bank;
}

Perceiver::Perceiver(PerceiverConfig config) : cfg_(config) {
  Rng rng(cfg_.seed);
  for (int64_t l = 0; l < cfg_.n_layers; ++l)
    nn::init_cross_block(params_, "block" + std::to_string(l), cfg_.d_model, cfg_.d_enc,
                         cfg_.ffn_mult, rng);
  nn::init_linear(params_, "out_proj", cfg_.d_model, cfg_.d_llm, rng);
  // Normalizing after the projection pins the soft-prompt scale; otherwise the
  // shared component of the outputs can grow without bound and drown the
  // feature-dependent part the LM needs to tell inputs apart.
  nn::init_norm(params_, "final_norm", cfg_.d_llm);
}

ModalityEmbedding Perceiver::perceive(const QueryBank& bank, const EncoderOutput& features) const {
  if (!bank.has(features.kind))
    throw ConfigError(std::string("perceive: no query tokens for modality ") +
                      modality_name(features.kind));
  if (bank.d_model() != cfg_.d_model)
    throw ConfigError("perceive: query width " + std::to_string(bank.d_model()) +
                      " does not match perceiver d_model " + std::to_string(cfg_.d_model));
  if (features.features.dim(1) != cfg_.d_enc)
    throw ConfigError("perceive: encoder features have width " +
                      std::to_string(features.features.dim(1)) +
                      ", cross-attention projection expects " + std::to_string(cfg_.d_enc));
  if (bank.n_queries() >= features.length())
    logging::warn("perceive: n_queries " + std::to_string(bank.n_queries()) +
                  " >= feature length " + std::to_string(features.length()) +
                  " (no compression on this input)");

  Tensor x = bank.queries(features.kind);
  for (int64_t l = 0; l < cfg_.n_layers; ++l)
    x = nn::cross_block(params_, "block" + std::to_string(l), x, features.features, cfg_.n_heads);
  x = nn::linear(params_, "out_proj", x);
  return ModalityEmbedding{features.kind, nn::norm(params_, "final_norm", x)};
}

}  // namespace mbridge
