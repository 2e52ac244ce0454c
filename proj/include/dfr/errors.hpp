#pragma once

#include <stdexcept>
#include <string>

namespace dfr {

// Violated precondition or API contract (bad shapes, duplicate ids, ...).
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// An operation produced NaN/Inf, or training diverged.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// backward() called on a graph whose nodes were already back-propagated.
class StaleGraphError : public std::runtime_error {
public:
    explicit StaleGraphError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure, reported with the offending path.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dfr
