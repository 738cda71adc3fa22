#pragma once

#include <stdexcept>
#include <string>

namespace mft {

// Error hierarchy shared by all modules. The CLI maps these onto exit codes;
// library users can catch the base class or a specific category.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/mode-index violations (wrong tensor order, mismatched factor sizes, ...).
class dimension_error : public error {
public:
    explicit dimension_error(const std::string& msg) : error(msg) {}
};

// Non-finite inputs, failed factorizations, overflow.
class numeric_error : public error {
public:
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

// Inputs outside the documented domain (e.g. forward-transform on values
// outside [0,1], nonpositive parameters).
class domain_error : public error {
public:
    explicit domain_error(const std::string& msg) : error(msg) {}
};

// Degenerate inputs a routine cannot meaningfully process (zero tensor, zero range).
class degenerate_error : public error {
public:
    explicit degenerate_error(const std::string& msg) : error(msg) {}
};

// Operations on models that have not been fitted / objects in the wrong state.
class state_error : public error {
public:
    explicit state_error(const std::string& msg) : error(msg) {}
};

// On-disk format problems: bad magic, truncated payload, malformed CSV.
class format_error : public error {
public:
    explicit format_error(const std::string& msg) : error(msg) {}
};

// Configuration problems (unknown keys, out-of-range values, missing paths).
class config_error : public error {
public:
    explicit config_error(const std::string& msg) : error(msg) {}
};

// Convergence-diagnostic problems (too few draws, R-hat failures under strict mode).
class diagnostic_error : public error {
public:
    explicit diagnostic_error(const std::string& msg) : error(msg) {}
};

} // namespace mft
