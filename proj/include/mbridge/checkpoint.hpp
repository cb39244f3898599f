#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbridge/params.hpp"
#include "mbridge/tensor.hpp"

namespace mbridge {

/// In-memory form of the on-disk checkpoint container: versioned header,
/// config echo, RNG state, parameter entries (name, dtype tag, shape,
/// little-endian raw buffer) and optional optimizer moment state.
struct CheckpointData {
  static constexpr uint32_t kVersion = 1;

  uint32_t version = kVersion;
  std::string config_echo;  // JSON text, informational
  std::string rng_state;

  struct ParamEntry {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    std::vector<uint8_t> bytes;
  };
  std::vector<ParamEntry> entries;

  bool has_optimizer = false;
  int64_t optimizer_step_count = 0;
  std::vector<AdamW::MomentEntry> moments;
};

/// Parameter sets serialized under a prefix so multiple components can share
/// one file without name collisions.
struct NamedParamSet {
  std::string prefix;  // e.g. "perceiver."
  const ParameterSet* params;
};
struct MutableNamedParamSet {
  std::string prefix;
  ParameterSet* params;
};

CheckpointData snapshot_checkpoint(const std::vector<NamedParamSet>& sets,
                                   const AdamW* optimizer = nullptr,
                                   const std::string& config_echo = "",
                                   const std::string& rng_state = "");

/// Restores values into existing parameter sets. Every checkpoint entry must
/// land somewhere and every destination parameter must be covered; any name,
/// shape or dtype mismatch is a configuration error.
void restore_checkpoint(const CheckpointData& data,
                        const std::vector<MutableNamedParamSet>& sets,
                        AdamW* optimizer = nullptr);

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace mbridge
