#include "mbridge/log.hpp"

#include <atomic>
#include <mutex>

namespace mbridge::logging {

namespace {
std::atomic<Level> g_threshold{Level::Info};
std::mutex g_mutex;

const char* tag(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    default: return "?";
  }
}
}  // namespace

Level threshold() { return g_threshold.load(std::memory_order_relaxed); }

void set_threshold(Level level) { g_threshold.store(level, std::memory_order_relaxed); }

void emit(Level level, const std::string& message) {
  if (level < threshold()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fprintf(stderr, "[%s] %s\n", tag(level), message.c_str());
}

}  // namespace mbridge::logging
