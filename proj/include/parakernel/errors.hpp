#pragma once

#include <stdexcept>
#include <string>

namespace pk {

/// Caller violated a documented precondition (bad argument, inadmissible dt, ...).
struct usage_error : std::invalid_argument {
    explicit usage_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A computation could not produce a trustworthy result (unconverged construction,
/// insufficient samples, divergence, aborted run, ...).
struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw usage_error(msg);
}

} // namespace pk
