#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "mbridge/error.hpp"
#include "mbridge/rng.hpp"

namespace mbridge {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }
inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Flat row-major value buffer in one of the two supported precisions.
using Buffer = std::variant<std::vector<float>, std::vector<double>>;

inline DType buffer_dtype(const Buffer& b) {
  return std::holds_alternative<std::vector<float>>(b) ? DType::F32 : DType::F64;
}
Buffer make_buffer(DType dt, size_t n, double fill = 0.0);
size_t buffer_size(const Buffer& b);
void buffer_add(Buffer& dst, const Buffer& src);  // elementwise +=, shapes assumed equal
double buffer_get(const Buffer& b, size_t i);

/// Calls f with a value of the buffer's scalar type (float{} or double{}).
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::F32) return f(float{});
  return f(double{});
}

class Tensor;
class GradFlow;

namespace autodiff {

/// One recorded operation on the define-by-run tape. Holds its inputs and a
/// closure that routes the output gradient into the parents' flow buffers.
/// The producing tensor is passed back in at backward time, so nodes never
/// reference their own output (no ownership cycles).
struct Node {
  const char* op = "?";
  std::vector<Tensor> parents;
  std::function<void(const Tensor& out, GradFlow& flow)> backprop;
};

/// define-by-run graph recording switch; generation/eval run with it off.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace autodiff

/// Dense n-d array over a flat row-major buffer, with optional grad buffer and
/// tape linkage. Copies share storage; values are immutable after creation
/// except through grad accumulation and explicit optimizer writes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt = DType::F32, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dt = DType::F32);
  static Tensor scalar(double value, DType dt = DType::F32);
  static Tensor from_values(Shape shape, const std::vector<double>& values, DType dt = DType::F32);
  /// i.i.d. normal(0, stddev), deterministic under the rng state.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, DType dt = DType::F32);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  const Buffer& data() const { return s_->data; }
  template <class T>
  std::span<const T> values() const {
    return std::span<const T>(std::get<std::vector<T>>(s_->data));
  }
  /// Mutable access; callers must not mutate tensors that already sit on a tape.
  template <class T>
  std::span<T> values_mut() {
    return std::span<T>(std::get<std::vector<T>>(s_->data));
  }

  double value_at(size_t flat_index) const;
  double item() const;  // scalar tensors only
  std::vector<double> to_vector() const;

  bool has_grad() const { return s_ && s_->grad != nullptr; }
  const Buffer& grad() const;
  Buffer& grad_mut();
  void ensure_grad();
  void zero_grad();
  std::vector<double> grad_to_vector() const;

  std::shared_ptr<autodiff::Node> node() const { return s_ ? s_->node : nullptr; }
  void set_node(std::shared_ptr<autodiff::Node> node);

  /// Same values, no grad requirement, no tape linkage. Shares the buffer.
  Tensor detach() const;
  /// Deep copy of values (no grad, no tape).
  Tensor clone() const;

  /// Storage identity; stable for the tensor's lifetime.
  const void* id() const { return s_.get(); }

  /// Raw little-endian bytes of the value buffer (serialization + bitwise checks).
  std::vector<uint8_t> raw_bytes() const;
  void overwrite_from_bytes(const std::vector<uint8_t>& bytes);

 private:
  struct Storage {
    Buffer data;
    std::unique_ptr<Buffer> grad;
    bool requires_grad = false;
    std::shared_ptr<autodiff::Node> node;
  };

  std::shared_ptr<Storage> s_;
  Shape shape_;

  static Tensor wrap(Buffer buf, Shape shape);
  friend class GradFlow;
};

/// Pass-local gradient buffers keyed by tensor identity. Kept separate from the
/// persistent .grad so that re-running backward on an un-zeroed graph adds the
/// same increments again (exact doubling), instead of compounding.
class GradFlow {
 public:
  Buffer& flow(const Tensor& t);
  const Buffer* find(const Tensor& t) const;

 private:
  std::unordered_map<const void*, Buffer> flows_;
};

/// Reverse-mode sweep from a scalar loss. Populates .grad on every
/// requires_grad tensor reached, accumulating across calls until zeroed.
void backward(const Tensor& loss, double seed = 1.0);

}  // namespace mbridge
