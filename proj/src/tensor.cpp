#include "mbridge/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "serialized buffers are little-endian raw bytes");

namespace mbridge {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Buffer make_buffer(DType dt, size_t n, double fill) {
  if (dt == DType::F32) return std::vector<float>(n, static_cast<float>(fill));
  return std::vector<double>(n, fill);
}

size_t buffer_size(const Buffer& b) {
  return std::visit([](const auto& v) { return v.size(); }, b);
}

void buffer_add(Buffer& dst, const Buffer& src) {
  std::visit(
      [&](auto& d) {
        using V = std::decay_t<decltype(d)>;
        const auto& s = std::get<V>(src);
        for (size_t i = 0; i < d.size(); ++i) d[i] += s[i];
      },
      dst);
}

double buffer_get(const Buffer& b, size_t i) {
  return std::visit([&](const auto& v) { return static_cast<double>(v[i]); }, b);
}

namespace autodiff {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace autodiff

Tensor Tensor::wrap(Buffer buf, Shape shape) {
  Tensor t;
  t.s_ = std::make_shared<Storage>();
  t.s_->data = std::move(buf);
  t.shape_ = std::move(shape);
  if (static_cast<int64_t>(buffer_size(t.s_->data)) != shape_numel(t.shape_))
    throw ShapeError("tensor: buffer size does not match shape " + shape_str(t.shape_));
  return t;
}

Tensor Tensor::zeros(Shape shape, DType dt, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  Tensor t = wrap(make_buffer(dt, static_cast<size_t>(n)), std::move(shape));
  t.s_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
  const int64_t n = shape_numel(shape);
  return wrap(make_buffer(dt, static_cast<size_t>(n), value), std::move(shape));
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dt) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  Buffer b = make_buffer(dt, values.size());
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        for (size_t i = 0; i < values.size(); ++i) v[i] = static_cast<T>(values[i]);
      },
      b);
  return wrap(std::move(b), std::move(shape));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, DType dt) {
  const size_t n = static_cast<size_t>(shape_numel(shape));
  Buffer b = make_buffer(dt, n);
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        for (size_t i = 0; i < n; ++i) v[i] = static_cast<T>(rng.normal(0.0, stddev));
      },
      b);
  return wrap(std::move(b), std::move(shape));
}

int64_t Tensor::numel() const { return s_ ? static_cast<int64_t>(buffer_size(s_->data)) : 0; }

DType Tensor::dtype() const { return buffer_dtype(s_->data); }

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  s_->requires_grad = value;
  return *this;
}

double Tensor::value_at(size_t flat_index) const { return buffer_get(s_->data, flat_index); }

double Tensor::item() const {
  if (numel() != 1) throw RankError("item: tensor has " + std::to_string(numel()) + " elements");
  return value_at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = value_at(i);
  return out;
}

const Buffer& Tensor::grad() const {
  if (!has_grad()) throw Error("grad: no gradient buffer present");
  return *s_->grad;
}

Buffer& Tensor::grad_mut() {
  ensure_grad();
  return *s_->grad;
}

void Tensor::ensure_grad() {
  if (!s_->grad) s_->grad = std::make_unique<Buffer>(make_buffer(dtype(), static_cast<size_t>(numel())));
}

void Tensor::zero_grad() {
  // Drops the buffer rather than zeroing it: optimizer participation is
  // "reached by backward since the last zero_grad", independent of history.
  if (s_) s_->grad.reset();
}

std::vector<double> Tensor::grad_to_vector() const {
  const Buffer& g = grad();
  std::vector<double> out(buffer_size(g));
  for (size_t i = 0; i < out.size(); ++i) out[i] = buffer_get(g, i);
  return out;
}

void Tensor::set_node(std::shared_ptr<autodiff::Node> node) { s_->node = std::move(node); }

Tensor Tensor::detach() const {
  Tensor t;
  t.s_ = std::make_shared<Storage>();
  t.s_->data = s_->data;  // value copy of the buffer; detached tensors own their bytes
  t.shape_ = shape_;
  return t;
}

Tensor Tensor::clone() const { return detach(); }

std::vector<uint8_t> Tensor::raw_bytes() const {
  std::vector<uint8_t> out;
  std::visit(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        out.resize(v.size() * sizeof(T));
        if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
      },
      s_->data);
  return out;
}

void Tensor::overwrite_from_bytes(const std::vector<uint8_t>& bytes) {
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        if (bytes.size() != v.size() * sizeof(T))
          throw LoadError("tensor: byte payload size mismatch for shape " + shape_str(shape_));
        if (!v.empty()) std::memcpy(v.data(), bytes.data(), bytes.size());
      },
      s_->data);
}

Buffer& GradFlow::flow(const Tensor& t) {
  auto it = flows_.find(t.id());
  if (it == flows_.end()) {
    it = flows_.emplace(t.id(), make_buffer(t.dtype(), static_cast<size_t>(t.numel()))).first;
  }
  return it->second;
}

const Buffer* GradFlow::find(const Tensor& t) const {
  auto it = flows_.find(t.id());
  return it == flows_.end() ? nullptr : &it->second;
}

void backward(const Tensor& loss, double seed) {
  if (!loss.defined()) throw Error("backward: undefined loss tensor");
  if (loss.numel() != 1)
    throw RankError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  // Post-order DFS; reversed it yields every tensor before its parents.
  std::vector<Tensor> order;
  std::unordered_map<const void*, bool> visited;
  std::vector<std::pair<Tensor, size_t>> stack;
  stack.emplace_back(loss, 0);
  visited[loss.id()] = true;
  while (!stack.empty()) {
    auto& [t, next_child] = stack.back();
    auto node = t.node();
    const size_t n_parents = node ? node->parents.size() : 0;
    if (next_child < n_parents) {
      Tensor parent = node->parents[next_child++];
      if (!visited[parent.id()]) {
        visited[parent.id()] = true;
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  GradFlow flow;
  std::visit([&](auto& v) { v[0] = static_cast<typename std::decay_t<decltype(v)>::value_type>(seed); },
             flow.flow(loss));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    auto node = t.node();
    if (!node || !node->backprop) continue;
    if (!flow.find(t)) continue;  // no gradient reached this subgraph
    node->backprop(t, flow);
  }

  for (const Tensor& t : order) {
    if (!t.requires_grad()) continue;
    const Buffer* f = flow.find(t);
    if (!f) continue;
    Tensor mutable_t = t;
    buffer_add(mutable_t.grad_mut(), *f);
  }
}

}  // namespace mbridge
