#pragma once

// Shared basics: scalar type, error taxonomy, small helpers.
// Everything numerical runs in double; float is an export-only format.

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedlab {

using Scalar = double;
using Vec = Eigen::VectorXd;
using Index = std::int64_t;

// A caller broke a documented precondition (shape mismatch, empty input, ...).
struct contract_violation : std::logic_error {
    using std::logic_error::logic_error;
};

// A config key is missing, malformed, or inconsistent with other keys.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// External data (files, CLI arguments) failed to parse or validate.
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_violation(msg);
}

// Non-fatal diagnostics (fallbacks taken, degenerate inputs). Kept as a
// function pointer so tests can silence or capture it.
void warn(const std::string& msg);
void set_warn_handler(void (*handler)(const std::string&));

} // namespace fedlab
