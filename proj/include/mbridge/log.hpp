#pragma once

#include <cstdio>
#include <string>

namespace mbridge::logging {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Silent = 4 };

Level threshold();
void set_threshold(Level level);

void emit(Level level, const std::string& message);

inline void debug(const std::string& m) { emit(Level::Debug, m); }
inline void info(const std::string& m) { emit(Level::Info, m); }
inline void warn(const std::string& m) { emit(Level::Warn, m); }
inline void error(const std::string& m) { emit(Level::Error, m); }

}  // namespace mbridge::logging
