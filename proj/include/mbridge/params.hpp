#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mbridge/tensor.hpp"

namespace mbridge {

/// Named trainable (or frozen) tensor. Frozen parameters are never touched by
/// any optimizer step; the tensor always participates in the tape so gradients
/// can flow through frozen weights into upstream activations.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

/// Ordered registry with unique names. Registration order is the canonical
/// serialization order.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor tensor, bool frozen = false);

  bool contains(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Tensor& tensor(const std::string& name) { return at(name).tensor; }
  const Tensor& tensor(const std::string& name) const { return at(name).tensor; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  void zero_grad();
  void freeze_all();
  bool all_frozen() const;

  /// Concatenated little-endian bytes of every tensor, in registration order.
  /// Used by the bitwise freeze-contract checks.
  std::vector<uint8_t> raw_bytes() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Scales every grad buffer so their joint L2 norm is at most max_norm;
/// returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<ParameterSet*>& sets, double max_norm);

/// Decoupled-weight-decay Adam over one or more parameter sets. Moment state
/// is held per parameter name and survives checkpointing.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : cfg_(config) {}

  AdamWConfig& config() { return cfg_; }
  const AdamWConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_count_; }

  /// One update over every non-frozen parameter that has a grad buffer.
  /// lr_scale multiplies the configured rate (warmup schedules).
  void step(std::vector<ParameterSet*> sets, double lr_scale = 1.0);

  struct MomentEntry {
    std::string name;
    Buffer m;
    Buffer v;
  };
  std::vector<MomentEntry> export_state() const;
  void import_state(std::vector<MomentEntry> entries, int64_t step_count);

 private:
  AdamWConfig cfg_;
  int64_t step_count_ = 0;
  std::unordered_map<std::string, std::pair<Buffer, Buffer>> moments_;
};

}  // namespace mbridge
