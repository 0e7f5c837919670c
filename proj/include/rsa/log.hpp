#pragma once

#include <functional>
#include <string_view>

namespace rsa {

enum class LogLevel { debug, info, warn, error };

using LogSink = std::function<void(LogLevel, std::string_view)>;

/// Replaces the process-wide sink. Passing an empty function restores the
/// default (stderr, warn and above).
void set_log_sink(LogSink sink);
void log(LogLevel level, std::string_view message);

}  // namespace rsa
