#include "mpref/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace mpref::logx {
namespace {

std::mutex g_mutex;

void default_sink(Level level, const std::string& msg) {
  const char* tag = level == Level::info ? "info" : level == Level::warn ? "warn" : "error";
  std::cerr << "[" << tag << "] " << msg << "\n";
}

Sink& sink_ref() {
  static Sink sink = default_sink;
  return sink;
}

void emit(Level level, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  if (sink_ref()) sink_ref()(level, msg);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(g_mutex);
  Sink previous = std::move(sink_ref());
  sink_ref() = std::move(sink);
  return previous;
}

void info(const std::string& msg) { emit(Level::info, msg); }
void warn(const std::string& msg) { emit(Level::warn, msg); }
void error(const std::string& msg) { emit(Level::error, msg); }

}  // namespace mpref::logx
