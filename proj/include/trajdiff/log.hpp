#ifndef TRAJDIFF_LOG_HPP
#define TRAJDIFF_LOG_HPP

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace trajdiff {

enum class LogLevel { info, warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {
inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, std::string_view msg) {
    std::clog << (level == LogLevel::warning ? "warning: " : "") << msg << '\n';
  };
  return sink;
}
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

// Returns the previous sink.
inline LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(detail::log_mutex());
  LogSink old = std::move(detail::log_sink());
  detail::log_sink() = std::move(sink);
  return old;
}

inline void log_message(LogLevel level, std::string_view msg) {
  std::lock_guard lock(detail::log_mutex());
  if (detail::log_sink()) detail::log_sink()(level, msg);
}

inline void warn(std::string_view msg) { log_message(LogLevel::warning, msg); }
inline void info(std::string_view msg) { log_message(LogLevel::info, msg); }

}  // namespace trajdiff

#endif  // TRAJDIFF_LOG_HPP
