#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedsplit {

using u32 = std::uint32_t;
using u64 = std::uint64_t;

/// Invalid configuration: bad shapes, unknown keys, out-of-range settings.
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Runtime numeric failure (NaN/Inf in an activation, divergence).
/// The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Log verbosity, controlled by the FEDSPLIT_LOG env var (0=quiet, 1=info, 2=debug).
int log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

/// FNV-1a over a byte string; used for stable config hashes.
u64 fnv1a(const std::string& bytes);

} // namespace fedsplit
