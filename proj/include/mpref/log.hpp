#pragma once

#include <functional>
#include <string>

namespace mpref::logx {

enum class Level { info, warn, error };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the process-wide sink; returns the previous one.
/// Default sink writes "[warn] ..." lines to stderr.
Sink set_sink(Sink sink);

void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

}  // namespace mpref::logx
