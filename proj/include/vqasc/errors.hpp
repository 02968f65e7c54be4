#pragma once

#include <stdexcept>
#include <string>

namespace vqasc {

/// Shape or axis mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (wrong stage, non-scalar loss, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Bad user-supplied input (frame counts, labels, config values).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Transmitter and receiver disagree about the symbol layout.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace vqasc
