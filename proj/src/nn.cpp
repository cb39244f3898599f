#include "mbridge/nn.hpp"

namespace mbridge::nn {

void init_linear(ParameterSet& params, const std::string& prefix, int64_t in, int64_t out,
                 Rng& rng, double sigma, bool frozen, DType dt) {
  params.add(prefix + ".w", Tensor::randn({in, out}, rng, sigma, dt), frozen);
  params.add(prefix + ".b", Tensor::zeros({out}, dt), frozen);
}

Tensor linear(const ParameterSet& params, const std::string& prefix, const Tensor& x) {
  return ops::add_bias(ops::matmul(x, params.tensor(prefix + ".w")),
                       params.tensor(prefix + ".b"));
}

void init_norm(ParameterSet& params, const std::string& prefix, int64_t d, bool frozen, DType dt) {
  params.add(prefix + ".g", Tensor::full({d}, 1.0, dt), frozen);
  params.add(prefix + ".b", Tensor::zeros({d}, dt), frozen);
}

Tensor norm(const ParameterSet& params, const std::string& prefix, const Tensor& x, double eps) {
  return ops::layer_norm(x, params.tensor(prefix + ".g"), params.tensor(prefix + ".b"), eps);
}

void init_self_block(ParameterSet& params, const std::string& prefix, int64_t d, int64_t ffn_mult,
                     Rng& rng, double sigma, bool frozen, DType dt) {
  init_norm(params, prefix + ".ln1", d, frozen, dt);
  init_linear(params, prefix + ".attn.q", d, d, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".attn.k", d, d, rng, sigma, frozen, dt);
  // Query/key norms keep attention logits from drifting into softmax
  // saturation over a training run (dead routing gradients otherwise).
  init_norm(params, prefix + ".attn.qn", d, frozen, dt);
  init_norm(params, prefix + ".attn.kn", d, frozen, dt);
  init_linear(params, prefix + ".attn.v", d, d, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".attn.o", d, d, rng, sigma, frozen, dt);
  init_norm(params, prefix + ".ln2", d, frozen, dt);
  init_linear(params, prefix + ".ffn.fc1", d, d * ffn_mult, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".ffn.fc2", d * ffn_mult, d, rng, sigma, frozen, dt);
}

Tensor self_block(const ParameterSet& params, const std::string& prefix, const Tensor& x,
                  int64_t n_heads, const ops::AttentionMask* mask) {
  Tensor normed = norm(params, prefix + ".ln1", x);
  Tensor q = norm(params, prefix + ".attn.qn", linear(params, prefix + ".attn.q", normed));
  Tensor k = norm(params, prefix + ".attn.kn", linear(params, prefix + ".attn.k", normed));
  Tensor v = linear(params, prefix + ".attn.v", normed);
  Tensor att = ops::multihead_attention(q, k, v, n_heads, mask);
  Tensor h = ops::add(x, linear(params, prefix + ".attn.o", att));
  Tensor f = linear(params, prefix + ".ffn.fc2",
                    ops::gelu(linear(params, prefix + ".ffn.fc1", norm(params, prefix + ".ln2", h))));
  return ops::add(h, f);
}

void init_cross_block(ParameterSet& params, const std::string& prefix, int64_t d, int64_t d_kv,
                      int64_t ffn_mult, Rng& rng, double sigma, bool frozen, DType dt) {
  init_norm(params, prefix + ".ln_self", d, frozen, dt);
  init_linear(params, prefix + ".self.q", d, d, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".self.k", d, d, rng, sigma, frozen, dt);
  init_norm(params, prefix + ".self.qn", d, frozen, dt);
  init_norm(params, prefix + ".self.kn", d, frozen, dt);
  init_linear(params, prefix + ".self.v", d, d, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".self.o", d, d, rng, sigma, frozen, dt);
  init_norm(params, prefix + ".ln_q", d, frozen, dt);
  init_norm(params, prefix + ".ln_kv", d_kv, frozen, dt);
  init_linear(params, prefix + ".cross.q", d, d, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".cross.k", d_kv, d, rng, sigma, frozen, dt);
  init_norm(params, prefix + ".cross.qn", d, frozen, dt);
  init_norm(params, prefix + ".cross.kn", d, frozen, dt);
  init_linear(params, prefix + ".cross.v", d_kv, d, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".cross.o", d, d, rng, sigma, frozen, dt);
  init_norm(params, prefix + ".ln_ffn", d, frozen, dt);
  init_linear(params, prefix + ".ffn.fc1", d, d * ffn_mult, rng, sigma, frozen, dt);
  init_linear(params, prefix + ".ffn.fc2", d * ffn_mult, d, rng, sigma, frozen, dt);
}

Tensor cross_block(const ParameterSet& params, const std::string& prefix, const Tensor& queries,
                   const Tensor& features, int64_t n_heads) {
  Tensor sn = norm(params, prefix + ".ln_self", queries);
  Tensor att = ops::multihead_attention(
      norm(params, prefix + ".self.qn", linear(params, prefix + ".self.q", sn)),
      norm(params, prefix + ".self.kn", linear(params, prefix + ".self.k", sn)),
      linear(params, prefix + ".self.v", sn), n_heads);
  Tensor h = ops::add(queries, linear(params, prefix + ".self.o", att));

  Tensor qn = norm(params, prefix + ".ln_q", h);
  Tensor kvn = norm(params, prefix + ".ln_kv", features);
  Tensor cross = ops::multihead_attention(
      norm(params, prefix + ".cross.qn", linear(params, prefix + ".cross.q", qn)),
      norm(params, prefix + ".cross.kn", linear(params, prefix + ".cross.k", kvn)),
      linear(params, prefix + ".cross.v", kvn), n_heads);
  h = ops::add(h, linear(params, prefix + ".cross.o", cross));

  Tensor f = linear(params, prefix + ".ffn.fc2",
                    ops::gelu(linear(params, prefix + ".ffn.fc1", norm(params, prefix + ".ln_ffn", h))));
  return ops::add(h, f);
}

}  // namespace mbridge::nn
