#include "mbridge/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <string>

namespace mbridge::ops {

namespace {

template <class T>
using ConstMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using MutMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
std::span<T> flow_span(GradFlow& flow, const Tensor& t) {
  return std::span<T>(std::get<std::vector<T>>(flow.flow(t)));
}

template <class T>
std::span<const T> out_grad_span(GradFlow& flow, const Tensor& out) {
  return std::span<const T>(std::get<std::vector<T>>(flow.flow(out)));
}

bool participates(const Tensor& t) { return t.requires_grad() || t.node() != nullptr; }

void attach(Tensor& out, const char* op, std::vector<Tensor> parents,
            std::function<void(const Tensor&, GradFlow&)> backprop) {
  if (!autodiff::grad_enabled()) return;
  bool any = false;
  for (const Tensor& p : parents)
    if (participates(p)) {
      any = true;
      break;
    }
  if (!any) return;
  auto node = std::make_shared<autodiff::Node>();
  node->op = op;
  node->parents = std::move(parents);
  node->backprop = std::move(backprop);
  out.set_node(std::move(node));
  out.set_requires_grad(true);
}

void require_same_layout(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

void require_finite(const Tensor& t, const char* op) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : t.values<T>())
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string(op) + ": non-finite input value");
  });
}

int64_t last_dim(const Tensor& t) {
  if (t.rank() < 1) throw ShapeError("expected rank >= 1");
  return t.dim(t.rank() - 1);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_layout(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>(), bv = b.values<T>();
    auto ov = out.values_mut<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  });
  attach(out, "add", {a, b}, [a, b](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      if (participates(a)) {
        auto da = flow_span<T>(flow, a);
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (participates(b)) {
        auto db = flow_span<T>(flow, b);
        for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_layout(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>(), bv = b.values<T>();
    auto ov = out.values_mut<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  });
  attach(out, "sub", {a, b}, [a, b](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      if (participates(a)) {
        auto da = flow_span<T>(flow, a);
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (participates(b)) {
        auto db = flow_span<T>(flow, b);
        for (size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
      }
    });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_layout(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>(), bv = b.values<T>();
    auto ov = out.values_mut<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  });
  attach(out, "mul", {a, b}, [a, b](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto av = a.values<T>(), bv = b.values<T>();
      if (participates(a)) {
        auto da = flow_span<T>(flow, a);
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
      }
      if (participates(b)) {
        auto db = flow_span<T>(flow, b);
        for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
      }
    });
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>();
    auto ov = out.values_mut<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + static_cast<T>(c);
  });
  attach(out, "add_scalar", {a}, [a](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto da = flow_span<T>(flow, a);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    });
  });
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto av = a.values<T>();
    auto ov = out.values_mut<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * static_cast<T>(c);
  });
  attach(out, "mul_scalar", {a}, [a, c](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto da = flow_span<T>(flow, a);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * static_cast<T>(c);
    });
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const int64_t cols = last_dim(x);
  if (b.rank() != 1 || b.dim(0) != cols)
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match trailing dim of " +
                     shape_str(x.shape()));
  if (x.dtype() != b.dtype()) throw ShapeError("add_bias: dtype mismatch");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const int64_t rows = x.numel() / cols;
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>(), bv = b.values<T>();
    auto ov = out.values_mut<T>();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] + bv[c];
  });
  attach(out, "add_bias", {x, b}, [x, b, rows, cols](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      if (participates(x)) {
        auto dx = flow_span<T>(flow, x);
        for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (participates(b)) {
        auto db = flow_span<T>(flow, b);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
      }
    });
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  if (a.dtype() != b.dtype()) throw ShapeError("matmul: dtype mismatch");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ConstMap<T> A(a.values<T>().data(), m, k);
    ConstMap<T> B(b.values<T>().data(), k, n);
    MutMap<T> C(out.values_mut<T>().data(), m, n);
    C.noalias() = A * B;
  });
  attach(out, "matmul", {a, b}, [a, b, m, k, n](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      ConstMap<T> dC(dy.data(), m, n);
      if (participates(a)) {
        ConstMap<T> B(b.values<T>().data(), k, n);
        MutMap<T> dA(flow_span<T>(flow, a).data(), m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (participates(b)) {
        ConstMap<T> A(a.values<T>().data(), m, k);
        MutMap<T> dB(flow_span<T>(flow, b).data(), k, n);
        dB.noalias() += A.transpose() * dC;
      }
    });
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto ov = out.values_mut<T>();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
  });
  attach(out, "transpose", {x}, [x, m, n](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto dx = flow_span<T>(flow, x);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
    });
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto ov = out.values_mut<T>();
    for (size_t i = 0; i < ov.size(); ++i) {
      const double v = static_cast<double>(xv[i]);
      ov[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2)));
    }
  });
  attach(out, "gelu", {x}, [x](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto xv = x.values<T>();
      auto dx = flow_span<T>(flow, x);
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (size_t i = 0; i < dy.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx[i] += dy[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  });
  return out;
}

Tensor softmax(const Tensor& x) {
  const int64_t cols = last_dim(x);
  if (cols < 1) throw ShapeError("softmax: empty last axis");
  require_finite(x, "softmax");
  const int64_t rows = x.numel() / cols;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto ov = out.values_mut<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * cols;
      T* orow = ov.data() + r * cols;
      T mx = row[0];
      for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double denom = 0.0;
      for (int64_t c = 0; c < cols; ++c) {
        const double e = std::exp(static_cast<double>(row[c] - mx));
        orow[c] = static_cast<T>(e);
        denom += e;
      }
      for (int64_t c = 0; c < cols; ++c) orow[c] = static_cast<T>(orow[c] / denom);
    }
  });
  attach(out, "softmax", {x}, [x, rows, cols](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto yv = o.values<T>();
      auto dx = flow_span<T>(flow, x);
      for (int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (int64_t c = 0; c < cols; ++c)
          dot += static_cast<double>(dy[r * cols + c]) * static_cast<double>(yv[r * cols + c]);
        for (int64_t c = 0; c < cols; ++c) {
          const size_t i = static_cast<size_t>(r * cols + c);
          dx[i] += static_cast<T>((static_cast<double>(dy[i]) - dot) * static_cast<double>(yv[i]));
        }
      }
    });
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int64_t cols = last_dim(x);
  if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols)
    throw ShapeError("layer_norm: gain/bias must be length " + std::to_string(cols));
  require_finite(x, "layer_norm");
  const int64_t rows = x.numel() / cols;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto gv = gain.values<T>(), bv = bias.values<T>();
    auto ov = out.values_mut<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * cols;
      double mu = 0.0;
      for (int64_t c = 0; c < cols; ++c) mu += row[c];
      mu /= cols;
      double var = 0.0;
      for (int64_t c = 0; c < cols; ++c) {
        const double d = row[c] - mu;
        var += d * d;
      }
      var /= cols;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int64_t c = 0; c < cols; ++c)
        ov[r * cols + c] = static_cast<T>((row[c] - mu) * inv * gv[c] + bv[c]);
    }
  });
  attach(out, "layer_norm", {x, gain, bias},
         [x, gain, bias, rows, cols, eps](const Tensor& o, GradFlow& flow) {
           dispatch(o.dtype(), [&](auto tag) {
             using T = decltype(tag);
             auto dy = out_grad_span<T>(flow, o);
             auto xv = x.values<T>();
             auto gv = gain.values<T>();
             std::vector<double> xhat(static_cast<size_t>(cols));
             for (int64_t r = 0; r < rows; ++r) {
               const T* row = xv.data() + r * cols;
               double mu = 0.0;
               for (int64_t c = 0; c < cols; ++c) mu += row[c];
               mu /= cols;
               double var = 0.0;
               for (int64_t c = 0; c < cols; ++c) {
                 const double d = row[c] - mu;
                 var += d * d;
               }
               var /= cols;
               const double inv = 1.0 / std::sqrt(var + eps);
               for (int64_t c = 0; c < cols; ++c) xhat[static_cast<size_t>(c)] = (row[c] - mu) * inv;
               if (participates(x)) {
                 auto dx = flow_span<T>(flow, x);
                 double mean_u = 0.0, mean_ux = 0.0;
                 for (int64_t c = 0; c < cols; ++c) {
                   const double u = static_cast<double>(gv[c]) * static_cast<double>(dy[r * cols + c]);
                   mean_u += u;
                   mean_ux += u * xhat[static_cast<size_t>(c)];
                 }
                 mean_u /= cols;
                 mean_ux /= cols;
                 for (int64_t c = 0; c < cols; ++c) {
                   const double u = static_cast<double>(gv[c]) * static_cast<double>(dy[r * cols + c]);
                   dx[r * cols + c] +=
                       static_cast<T>((u - mean_u - xhat[static_cast<size_t>(c)] * mean_ux) * inv);
                 }
               }
               if (participates(gain)) {
                 auto dg = flow_span<T>(flow, gain);
                 for (int64_t c = 0; c < cols; ++c)
                   dg[c] += static_cast<T>(static_cast<double>(dy[r * cols + c]) *
                                           xhat[static_cast<size_t>(c)]);
               }
               if (participates(bias)) {
                 auto db = flow_span<T>(flow, bias);
                 for (int64_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
               }
             }
           });
         });
  return out;
}

AttentionMask AttentionMask::causal(int64_t length) {
  AttentionMask m;
  m.rows = length;
  m.cols = length;
  m.keep.assign(static_cast<size_t>(length * length), 0);
  for (int64_t r = 0; r < length; ++r)
    for (int64_t c = 0; c <= r; ++c) m.keep[static_cast<size_t>(r * length + c)] = 1;
  return m;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  if (q.dim(1) != k.dim(1))
    throw ShapeError("attention: q/k feature dims disagree, " + shape_str(q.shape()) + " vs " +
                     shape_str(k.shape()));
  if (k.dim(0) != v.dim(0))
    throw ShapeError("attention: k/v lengths disagree, " + shape_str(k.shape()) + " vs " +
                     shape_str(v.shape()));
  const int64_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (mask) {
    if (mask->rows != lq || mask->cols != lk)
      throw ShapeError("attention: mask is " + std::to_string(mask->rows) + "x" +
                       std::to_string(mask->cols) + ", expected " + std::to_string(lq) + "x" +
                       std::to_string(lk));
    for (int64_t r = 0; r < lq; ++r) {
      bool any = false;
      for (int64_t c = 0; c < lk && !any; ++c) any = mask->at(r, c);
      if (!any)
        throw DegenerateMaskError("attention: query row " + std::to_string(r) +
                                  " has every key masked");
    }
  }

  Tensor scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (mask) {
    // Additive bias: 0 where attended, a large negative where excluded. Kept
    // finite so masked softmax stays well-defined.
    Tensor bias = Tensor::zeros({lq, lk}, scores.dtype());
    dispatch(scores.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto bvals = bias.values_mut<T>();
      for (int64_t r = 0; r < lq; ++r)
        for (int64_t c = 0; c < lk; ++c)
          if (!mask->at(r, c)) bvals[r * lk + c] = static_cast<T>(-1e9);
    });
    scores = add(scores, bias);
  }
  Tensor weights = softmax(scores);
  return matmul(weights, v);
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads,
                           const AttentionMask* mask) {
  const int64_t d = q.dim(1), dv = v.dim(1);
  if (n_heads < 1 || d % n_heads != 0 || dv % n_heads != 0)
    throw ConfigError("multihead_attention: dims " + std::to_string(d) + "/" + std::to_string(dv) +
                      " not divisible by " + std::to_string(n_heads) + " heads");
  if (n_heads == 1) return attention(q, k, v, mask);
  const int64_t hd = d / n_heads, hdv = dv / n_heads;
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int64_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, hd);
    Tensor kh = slice_cols(k, h * hd, hd);
    Tensor vh = slice_cols(v, h * hdv, hdv);
    heads.push_back(attention(qh, kh, vh, mask));
  }
  return concat_cols(heads);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int64_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  if (cols < 0) throw ShapeError("concat_rows: parts must be rank 2");
  const DType dt = parts[0].dtype();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != cols || p.dtype() != dt)
      throw ShapeError("concat_rows: inconsistent part " + shape_str(p.shape()));
    total += p.dim(0);
  }
  Tensor out = Tensor::zeros({total, cols}, dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    auto ov = out.values_mut<T>();
    int64_t row = 0;
    for (const Tensor& p : parts) {
      auto pv = p.values<T>();
      std::memcpy(ov.data() + row * cols, pv.data(), pv.size() * sizeof(T));
      row += p.dim(0);
    }
  });
  attach(out, "concat_rows", parts, [parts, cols](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      int64_t row = 0;
      for (const Tensor& p : parts) {
        if (participates(p)) {
          auto dp = flow_span<T>(flow, p);
          for (size_t i = 0; i < dp.size(); ++i) dp[i] += dy[static_cast<size_t>(row * cols) + i];
        }
        row += p.dim(0);
      }
    });
  });
  return out;
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t count) {
  require_rank2(x, "slice_rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 1 || start + count > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + std::to_string(rows) + " rows");
  Tensor out = Tensor::zeros({count, cols}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto ov = out.values_mut<T>();
    std::memcpy(ov.data(), xv.data() + start * cols, static_cast<size_t>(count * cols) * sizeof(T));
  });
  attach(out, "slice_rows", {x}, [x, start, cols](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto dx = flow_span<T>(flow, x);
      for (size_t i = 0; i < dy.size(); ++i) dx[static_cast<size_t>(start * cols) + i] += dy[i];
    });
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t start, int64_t count) {
  require_rank2(x, "slice_cols");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 1 || start + count > cols)
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + std::to_string(cols) + " cols");
  Tensor out = Tensor::zeros({rows, count}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto ov = out.values_mut<T>();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(ov.data() + r * count, xv.data() + r * cols + start,
                  static_cast<size_t>(count) * sizeof(T));
  });
  attach(out, "slice_cols", {x}, [x, start, count, rows, cols](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto dx = flow_span<T>(flow, x);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < count; ++c) dx[r * cols + start + c] += dy[r * count + c];
    });
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t rows = parts[0].dim(0);
  const DType dt = parts[0].dtype();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != rows || p.dtype() != dt)
      throw ShapeError("concat_cols: inconsistent part " + shape_str(p.shape()));
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({rows, total}, dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    auto ov = out.values_mut<T>();
    int64_t col = 0;
    for (const Tensor& p : parts) {
      auto pv = p.values<T>();
      const int64_t pc = p.dim(1);
      for (int64_t r = 0; r < rows; ++r)
        std::memcpy(ov.data() + r * total + col, pv.data() + r * pc,
                    static_cast<size_t>(pc) * sizeof(T));
      col += pc;
    }
  });
  attach(out, "concat_cols", parts, [parts, rows, total](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      int64_t col = 0;
      for (const Tensor& p : parts) {
        const int64_t pc = p.dim(1);
        if (participates(p)) {
          auto dp = flow_span<T>(flow, p);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < pc; ++c) dp[r * pc + c] += dy[r * total + col + c];
        }
        col += pc;
      }
    });
  });
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embedding_rows");
  const int64_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw ShapeError("embedding_rows: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
  const int64_t n = static_cast<int64_t>(ids.size());
  if (n == 0) throw ShapeError("embedding_rows: empty id list");
  Tensor out = Tensor::zeros({n, d}, table.dtype());
  dispatch(table.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto tv = table.values<T>();
    auto ov = out.values_mut<T>();
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(ov.data() + i * d, tv.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d,
                  static_cast<size_t>(d) * sizeof(T));
  });
  attach(out, "embedding_rows", {table}, [table, ids, d](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dy = out_grad_span<T>(flow, o);
      auto dt = flow_span<T>(flow, table);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t c = 0; c < d; ++c)
          dt[static_cast<int64_t>(ids[i]) * d + c] += dy[static_cast<int64_t>(i) * d + c];
    });
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    double acc = 0.0;
    for (T v : x.values<T>()) acc += v;
    out.values_mut<T>()[0] = static_cast<T>(acc);
  });
  attach(out, "sum", {x}, [x](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T dy = out_grad_span<T>(flow, o)[0];
      auto dx = flow_span<T>(flow, x);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
    });
  });
  return out;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::zeros({1}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    double acc = 0.0;
    for (T v : x.values<T>()) acc += v;
    out.values_mut<T>()[0] = static_cast<T>(acc / n);
  });
  attach(out, "mean", {x}, [x, n](const Tensor& o, GradFlow& flow) {
    dispatch(o.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const double dy = static_cast<double>(out_grad_span<T>(flow, o)[0]) / n;
      auto dx = flow_span<T>(flow, x);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<T>(dy);
    });
  });
  return out;
}

Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask) {
  require_rank2(logits, "cross_entropy_masked");
  const int64_t t_len = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != t_len || static_cast<int64_t>(mask.size()) != t_len)
    throw ShapeError("cross_entropy_masked: targets/mask length must be " + std::to_string(t_len));
  require_finite(logits, "cross_entropy_masked");
  int64_t n_masked = 0;
  for (int64_t t = 0; t < t_len; ++t) {
    if (!mask[static_cast<size_t>(t)]) continue;
    ++n_masked;
    const int id = targets[static_cast<size_t>(t)];
    if (id < 0 || id >= vocab)
      throw ShapeError("cross_entropy_masked: target " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
  }
  if (n_masked == 0) throw EmptyLossError("cross_entropy_masked: no masked-in positions");

  Tensor out = Tensor::zeros({1}, logits.dtype());
  dispatch(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto lv = logits.values<T>();
    double acc = 0.0;
    for (int64_t t = 0; t < t_len; ++t) {
      if (!mask[static_cast<size_t>(t)]) continue;
      const T* row = lv.data() + t * vocab;
      T mx = row[0];
      for (int64_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
      double denom = 0.0;
      for (int64_t c = 0; c < vocab; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
      const double lse = static_cast<double>(mx) + std::log(denom);
      acc += lse - static_cast<double>(row[targets[static_cast<size_t>(t)]]);
    }
    out.values_mut<T>()[0] = static_cast<T>(acc / static_cast<double>(n_masked));
  });
  attach(out, "cross_entropy_masked", {logits},
         [logits, targets, mask, t_len, vocab, n_masked](const Tensor& o, GradFlow& flow) {
           dispatch(o.dtype(), [&](auto tag) {
             using T = decltype(tag);
             const double dy = static_cast<double>(out_grad_span<T>(flow, o)[0]);
             auto lv = logits.values<T>();
             auto dl = flow_span<T>(flow, logits);
             const double scale = dy / static_cast<double>(n_masked);
             for (int64_t t = 0; t < t_len; ++t) {
               if (!mask[static_cast<size_t>(t)]) continue;
               const T* row = lv.data() + t * vocab;
               T mx = row[0];
               for (int64_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
               double denom = 0.0;
               for (int64_t c = 0; c < vocab; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
               for (int64_t c = 0; c < vocab; ++c) {
                 double p = std::exp(static_cast<double>(row[c] - mx)) / denom;
                 if (c == targets[static_cast<size_t>(t)]) p -= 1.0;
                 dl[t * vocab + c] += static_cast<T>(p * scale);
               }
             }
           });
         });
  return out;
}

Tensor sinusoidal_encoding(int64_t length, int64_t d, DType dt) {
  Tensor out = Tensor::zeros({length, d}, dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    auto ov = out.values_mut<T>();
    for (int64_t pos = 0; pos < length; ++pos) {
      for (int64_t j = 0; j < d; ++j) {
        const double rate = std::pow(10000.0, -2.0 * static_cast<double>(j / 2) / static_cast<double>(d));
        const double angle = static_cast<double>(pos) * rate;
        ov[pos * d + j] = static_cast<T>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
      }
    }
  });
  return out;
}

}  // namespace mbridge::ops
