#pragma once

#include <optional>
#include <vector>

#include "mbridge/tensor.hpp"

namespace mbridge::ops {

// Elementwise; operands must agree in shape and dtype.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

/// x[... x C] + b[C], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x);

Tensor gelu(const Tensor& x);

/// Row-wise softmax over the last axis, max-subtracted. Rejects NaN/Inf input.
Tensor softmax(const Tensor& x);

/// Row-wise standardization over the last axis (population variance,
/// eps-stabilized), then elementwise affine with gain/bias of length d.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Boolean keep-mask for attention; data is row-major rows x cols, true = attend.
struct AttentionMask {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint8_t> keep;

  static AttentionMask causal(int64_t length);
  bool at(int64_t r, int64_t c) const { return keep[static_cast<size_t>(r * cols + c)] != 0; }
};

/// softmax(q k^T / sqrt(d), masked pairs excluded) v. Every query row must keep
/// at least one key.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionMask* mask = nullptr);

/// Splits the feature axis into n_heads slices, runs attention per head,
/// concatenates the results.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads,
                           const AttentionMask* mask = nullptr);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t count);
Tensor slice_cols(const Tensor& x, int64_t start, int64_t count);

/// Gathers rows of table [V x d] at the given indices -> [n x d].
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean of -log softmax(logits)[t, targets[t]] over positions with mask true.
/// logits is [T x V]; targets and mask have length T.
Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask);

/// Fixed sinusoidal position table [length x d]; constant, never on the tape.
Tensor sinusoidal_encoding(int64_t length, int64_t d, DType dt = DType::F32);

}  // namespace mbridge::ops
