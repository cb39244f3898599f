#include "mbridge/rng.hpp"

#include <sstream>

#include "mbridge/error.hpp"

namespace mbridge {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng r;
  std::istringstream is(state);
  is >> r.engine_;
  if (is.fail()) throw LoadError("rng: malformed engine state");
  return r;
}

uint64_t Rng::mix(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over the combined words.
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mbridge
