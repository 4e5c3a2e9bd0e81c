#pragma once

#include <stdexcept>
#include <string>

namespace pdbsde {

// A numerical guarantee that should hold by construction did not.
class InvariantViolation : public std::runtime_error {
public:
    explicit InvariantViolation(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pdbsde
