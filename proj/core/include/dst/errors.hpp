#ifndef DST_ERRORS_HPP
#define DST_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dst {

// Dimension/shape disagreement between tensors or layer descriptors.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A precondition of an operation was violated by the caller.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// An object was used in a state it does not support (missing gradient
// buffer, repeated backward on a consumed graph, ...).
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid run configuration (bad sparsity, inconsistent model spec, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file failed to parse. `offset` is the byte offset (binary formats) or
// line number (text formats) at which parsing stopped.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
          offset(offset) {}
    std::size_t offset;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown by the streaming global top-k when fewer than k candidates exist.
// Carries the deficit so the caller can shrink k and re-plan.
struct TopkShortfall : std::runtime_error {
    TopkShortfall(std::size_t requested, std::size_t available)
        : std::runtime_error("top-k shortfall: requested " + std::to_string(requested) +
                             " candidates, only " + std::to_string(available) + " available"),
          requested(requested),
          available(available),
          deficit(requested - available) {}
    std::size_t requested;
    std::size_t available;
    std::size_t deficit;
};

} // namespace dst

#endif // DST_ERRORS_HPP
