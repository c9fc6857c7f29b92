#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace kvconsist::detail {

/// Library logger writing to stderr. Verbosity comes from KVCONSIST_LOG
/// (trace, debug, info, warn, error, off); the default is warn.
spdlog::logger& log();

}  // namespace kvconsist::detail
