#include "mbridge/params.hpp"

#include <algorithm>
#include <cmath>

#include "mbridge/error.hpp"

namespace mbridge {

Parameter& ParameterSet::add(const std::string& name, Tensor tensor, bool frozen) {
  if (index_.count(name)) throw ConfigError("parameter registered twice: " + name);
  tensor.set_requires_grad(true);  // frozen weights still sit on the tape
  index_[name] = params_.size();
  params_.push_back(Parameter{name, std::move(tensor), frozen});
  return params_.back();
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) > 0; }

Parameter& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

void ParameterSet::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

void ParameterSet::freeze_all() {
  for (Parameter& p : params_) p.frozen = true;
}

bool ParameterSet::all_frozen() const {
  return std::all_of(params_.begin(), params_.end(), [](const Parameter& p) { return p.frozen; });
}

std::vector<uint8_t> ParameterSet::raw_bytes() const {
  std::vector<uint8_t> out;
  for (const Parameter& p : params_) {
    auto bytes = p.tensor.raw_bytes();
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

double clip_grad_norm(const std::vector<ParameterSet*>& sets, double max_norm) {
  double sq = 0.0;
  for (ParameterSet* set : sets) {
    for (Parameter& p : set->all()) {
      if (p.frozen || !p.tensor.has_grad()) continue;
      for (double g : p.tensor.grad_to_vector()) sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm <= 0.0 || norm <= max_norm || norm == 0.0) return norm;
  const double scale = max_norm / norm;
  for (ParameterSet* set : sets) {
    for (Parameter& p : set->all()) {
      if (p.frozen || !p.tensor.has_grad()) continue;
      dispatch(p.tensor.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto& g = std::get<std::vector<T>>(p.tensor.grad_mut());
        for (T& v : g) v = static_cast<T>(static_cast<double>(v) * scale);
      });
    }
  }
  return norm;
}

void AdamW::step(std::vector<ParameterSet*> sets, double lr_scale) {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double lr = cfg_.lr * lr_scale;

  for (ParameterSet* set : sets) {
    for (Parameter& p : set->all()) {
      if (p.frozen) continue;
      if (!p.tensor.has_grad()) continue;
      auto it = moments_.find(p.name);
      if (it == moments_.end()) {
        const size_t n = static_cast<size_t>(p.tensor.numel());
        it = moments_
                 .emplace(p.name, std::make_pair(make_buffer(p.tensor.dtype(), n),
                                                 make_buffer(p.tensor.dtype(), n)))
                 .first;
      }
      dispatch(p.tensor.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto w = p.tensor.values_mut<T>();
        const auto& gbuf = std::get<std::vector<T>>(p.tensor.grad());
        auto& m = std::get<std::vector<T>>(it->second.first);
        auto& v = std::get<std::vector<T>>(it->second.second);
        for (size_t i = 0; i < w.size(); ++i) {
          const double g = static_cast<double>(gbuf[i]);
          const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
          const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
          m[i] = static_cast<T>(mi);
          v[i] = static_cast<T>(vi);
          const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
          w[i] = static_cast<T>(static_cast<double>(w[i]) -
                                lr * (update + cfg_.weight_decay * static_cast<double>(w[i])));
        }
      });
    }
  }
}

std::vector<AdamW::MomentEntry> AdamW::export_state() const {
  std::vector<MomentEntry> out;
  out.reserve(moments_.size());
  for (const auto& [name, mv] : moments_) out.push_back(MomentEntry{name, mv.first, mv.second});
  std::sort(out.begin(), out.end(),
            [](const MomentEntry& a, const MomentEntry& b) { return a.name < b.name; });
  return out;
}

void AdamW::import_state(std::vector<MomentEntry> entries, int64_t step_count) {
  moments_.clear();
  for (MomentEntry& e : entries) moments_[e.name] = {std::move(e.m), std::move(e.v)};
  step_count_ = step_count;
}

}  // namespace mbridge
