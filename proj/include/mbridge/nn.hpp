#pragma once

#include <string>

#include "mbridge/ops.hpp"
#include "mbridge/params.hpp"
#include "mbridge/rng.hpp"

namespace mbridge::nn {

/// Registers `<prefix>.w` [in x out] (normal, sigma) and `<prefix>.b` [out] (zeros).
void init_linear(ParameterSet& params, const std::string& prefix, int64_t in, int64_t out,
                 Rng& rng, double sigma = 0.02, bool frozen = false, DType dt = DType::F32);
Tensor linear(const ParameterSet& params, const std::string& prefix, const Tensor& x);

/// Registers `<prefix>.g` (ones) and `<prefix>.b` (zeros) of length d.
void init_norm(ParameterSet& params, const std::string& prefix, int64_t d, bool frozen = false,
               DType dt = DType::F32);
Tensor norm(const ParameterSet& params, const std::string& prefix, const Tensor& x,
            double eps = 1e-5);

/// Pre-norm transformer block: x + attn(ln1(x)), then + ffn(ln2(.)).
void init_self_block(ParameterSet& params, const std::string& prefix, int64_t d, int64_t ffn_mult,
                     Rng& rng, double sigma = 0.02, bool frozen = false, DType dt = DType::F32);
Tensor self_block(const ParameterSet& params, const std::string& prefix, const Tensor& x,
                  int64_t n_heads, const ops::AttentionMask* mask = nullptr);

/// Decoder block for the resampler: self-attention over the query rows, then
/// cross-attention with keys/values projected from encoder features (width
/// d_kv), then the feed-forward. Pre-norm with residuals throughout.
void init_cross_block(ParameterSet& params, const std::string& prefix, int64_t d, int64_t d_kv,
                      int64_t ffn_mult, Rng& rng, double sigma = 0.02, bool frozen = false,
                      DType dt = DType::F32);
Tensor cross_block(const ParameterSet& params, const std::string& prefix, const Tensor& queries,
                   const Tensor& features, int64_t n_heads);

}  // namespace mbridge::nn
