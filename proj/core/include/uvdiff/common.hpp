#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace uvdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Precondition violations (bad shapes, invalid arguments) throw
// std::invalid_argument; state/IO failures throw std::runtime_error.
[[noreturn]] inline void fail_arg(const std::string& msg) {
    throw std::invalid_argument(msg);
}
[[noreturn]] inline void fail_state(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail_arg(msg);
}

// Optional runtime checking of op outputs (NaN/Inf screens). Off by default;
// tests and debugging turn it on. Thread-local so tests can't race.
namespace detail {
inline thread_local bool g_checked_mode = false;
}
inline void set_checked_mode(bool on) { detail::g_checked_mode = on; }
inline bool checked_mode() { return detail::g_checked_mode; }

} // namespace uvdiff
