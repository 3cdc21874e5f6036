#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace diffenc {

/// Argument outside the mathematical domain of an operation (t outside [0,1], s >= t, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Inconsistent configuration: missing encoder network, dimension mismatch, bad flag value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A NaN/Inf appeared in a forward value, gradient or sampled latent.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the byte offset where parsing stopped.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

namespace detail {

inline void require_domain(bool ok, const char* msg) {
    if (!ok) throw DomainError(msg);
}

}  // namespace detail
}  // namespace diffenc
