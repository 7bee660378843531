#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cupid {

// Scalar type for all tensor math. Double by default so gradient checks have
// headroom; -DCUPID_REAL_FLOAT switches training builds to single precision.
#ifdef CUPID_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

// ----------------------------- error taxonomy -----------------------------
// CLI exit codes: config_error -> 2, io_error -> 3, numeric_error -> 4.

struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};

// Shape/dimension mismatches. A misconfigured model surfaces here, so it
// maps to the config exit code.
struct shape_error : config_error {
    explicit shape_error(const std::string& msg) : config_error(msg) {}
};

struct io_error : error {
    explicit io_error(const std::string& msg) : error(msg) {}
};

struct parse_error : io_error {
    explicit parse_error(const std::string& msg) : io_error(msg) {}
};

struct numeric_error : error {
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

// Violated internal contract (caller bug, not user input).
struct contract_error : error {
    explicit contract_error(const std::string& msg) : error(msg) {}
};

}  // namespace cupid
