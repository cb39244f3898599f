#include "mbridge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_set>

#include "mbridge/error.hpp"

namespace mbridge {

namespace {

constexpr char kMagic[4] = {'M', 'B', 'C', 'K'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_bytes(std::ostream& out, const std::vector<uint8_t>& b) {
  put<uint64_t>(out, b.size());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

template <class T>
T take(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LoadError("checkpoint: truncated file " + path);
  return v;
}

std::string take_string(std::istream& in, const std::string& path) {
  const uint64_t n = take<uint64_t>(in, path);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw LoadError("checkpoint: truncated file " + path);
  return s;
}

std::vector<uint8_t> take_bytes(std::istream& in, const std::string& path) {
  const uint64_t n = take<uint64_t>(in, path);
  std::vector<uint8_t> b(n);
  in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(n));
  if (!in) throw LoadError("checkpoint: truncated file " + path);
  return b;
}

std::vector<uint8_t> buffer_bytes(const Buffer& buf) {
  std::vector<uint8_t> out;
  std::visit(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        out.resize(v.size() * sizeof(T));
        if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
      },
      buf);
  return out;
}

Buffer bytes_to_buffer(DType dt, const std::vector<uint8_t>& bytes, const std::string& what) {
  const size_t unit = dtype_size(dt);
  if (bytes.size() % unit != 0) throw LoadError("checkpoint: ragged buffer for " + what);
  Buffer buf = make_buffer(dt, bytes.size() / unit);
  std::visit(
      [&](auto& v) {
        if (!v.empty()) std::memcpy(v.data(), bytes.data(), bytes.size());
      },
      buf);
  return buf;
}

}  // namespace

CheckpointData snapshot_checkpoint(const std::vector<NamedParamSet>& sets, const AdamW* optimizer,
                                   const std::string& config_echo, const std::string& rng_state) {
  CheckpointData data;
  data.config_echo = config_echo;
  data.rng_state = rng_state;
  for (const auto& [prefix, params] : sets) {
    for (const Parameter& p : params->all()) {
      CheckpointData::ParamEntry entry;
      entry.name = prefix + p.name;
      entry.dtype = p.tensor.dtype();
      entry.shape = p.tensor.shape();
      entry.bytes = p.tensor.raw_bytes();
      data.entries.push_back(std::move(entry));
    }
  }
  if (optimizer) {
    data.has_optimizer = true;
    data.optimizer_step_count = optimizer->step_count();
    data.moments = optimizer->export_state();
  }
  return data;
}

void restore_checkpoint(const CheckpointData& data, const std::vector<MutableNamedParamSet>& sets,
                        AdamW* optimizer) {
  std::unordered_set<std::string> consumed;
  for (const auto& entry : data.entries) {
    bool placed = false;
    for (const auto& [prefix, params] : sets) {
      if (entry.name.rfind(prefix, 0) != 0) continue;
      const std::string local = entry.name.substr(prefix.size());
      if (!params->contains(local)) continue;
      Parameter& p = params->at(local);
      if (p.tensor.shape() != entry.shape)
        throw ConfigError("checkpoint: shape mismatch for " + entry.name + ": file has " +
                          shape_str(entry.shape) + ", model has " + shape_str(p.tensor.shape()));
      if (p.tensor.dtype() != entry.dtype)
        throw ConfigError("checkpoint: dtype mismatch for " + entry.name);
      p.tensor.overwrite_from_bytes(entry.bytes);
      consumed.insert(entry.name);
      placed = true;
      break;
    }
    if (!placed) throw ConfigError("checkpoint: entry " + entry.name + " has no destination");
  }
  for (const auto& [prefix, params] : sets)
    for (const Parameter& p : params->all())
      if (!consumed.count(prefix + p.name))
        throw ConfigError("checkpoint: parameter " + prefix + p.name + " missing from file");

  if (optimizer) {
    if (!data.has_optimizer) throw ConfigError("checkpoint: no optimizer state in file");
    optimizer->import_state(data.moments, data.optimizer_step_count);
  }
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  put<uint32_t>(out, data.version);
  put_string(out, data.config_echo);
  put_string(out, data.rng_state);
  put<uint32_t>(out, static_cast<uint32_t>(data.entries.size()));
  for (const auto& entry : data.entries) {
    put_string(out, entry.name);
    put<uint8_t>(out, static_cast<uint8_t>(entry.dtype));
    put<uint32_t>(out, static_cast<uint32_t>(entry.shape.size()));
    for (int64_t d : entry.shape) put<int64_t>(out, d);
    put_bytes(out, entry.bytes);
  }
  put<uint8_t>(out, data.has_optimizer ? 1 : 0);
  if (data.has_optimizer) {
    put<int64_t>(out, data.optimizer_step_count);
    put<uint32_t>(out, static_cast<uint32_t>(data.moments.size()));
    for (const auto& m : data.moments) {
      put_string(out, m.name);
      put<uint8_t>(out, static_cast<uint8_t>(buffer_dtype(m.m)));
      put_bytes(out, buffer_bytes(m.m));
      put_bytes(out, buffer_bytes(m.v));
    }
  }
  if (!out) throw Error("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw LoadError("checkpoint: bad magic in " + path);
  CheckpointData data;
  data.version = take<uint32_t>(in, path);
  if (data.version != CheckpointData::kVersion)
    throw LoadError("checkpoint: version " + std::to_string(data.version) + " in " + path +
                    ", expected " + std::to_string(CheckpointData::kVersion));
  data.config_echo = take_string(in, path);
  data.rng_state = take_string(in, path);
  const uint32_t n_entries = take<uint32_t>(in, path);
  for (uint32_t i = 0; i < n_entries; ++i) {
    CheckpointData::ParamEntry entry;
    entry.name = take_string(in, path);
    entry.dtype = static_cast<DType>(take<uint8_t>(in, path));
    const uint32_t rank = take<uint32_t>(in, path);
    for (uint32_t r = 0; r < rank; ++r) entry.shape.push_back(take<int64_t>(in, path));
    entry.bytes = take_bytes(in, path);
    if (static_cast<int64_t>(entry.bytes.size()) !=
        shape_numel(entry.shape) * static_cast<int64_t>(dtype_size(entry.dtype)))
      throw LoadError("checkpoint: buffer/shape mismatch for " + entry.name + " in " + path);
    data.entries.push_back(std::move(entry));
  }
  const uint8_t has_opt = take<uint8_t>(in, path);
  if (has_opt) {
    data.has_optimizer = true;
    data.optimizer_step_count = take<int64_t>(in, path);
    const uint32_t n_moments = take<uint32_t>(in, path);
    for (uint32_t i = 0; i < n_moments; ++i) {
      AdamW::MomentEntry m;
      m.name = take_string(in, path);
      const DType dt = static_cast<DType>(take<uint8_t>(in, path));
      m.m = bytes_to_buffer(dt, take_bytes(in, path), m.name);
      m.v = bytes_to_buffer(dt, take_bytes(in, path), m.name);
      data.moments.push_back(std::move(m));
    }
  }
  return data;
}

}  // namespace mbridge
