#include "fedsplit/common.hpp"

#include <cstdlib>
#include <iostream>

namespace fedsplit {

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("FEDSPLIT_LOG");
        if (env == nullptr || *env == '\0') return 0;
        const std::string v(env);
        if (v == "debug" || v == "2") return 2;
        if (v == "info" || v == "1") return 1;
        return 0;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::clog << "[fedsplit] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::clog << "[fedsplit] " << msg << "\n";
}

u64 fnv1a(const std::string& bytes) {
    u64 h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace fedsplit
