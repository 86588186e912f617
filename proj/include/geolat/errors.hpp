#pragma once

#include <stdexcept>
#include <string>

namespace geolat {

/// Input violates an operation's preconditions.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Point configuration does not determine a unique solution (e.g. collinear points).
class DegenerateConfiguration : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A pipeline stage was requested before the stages it depends on.
class MissingPrerequisite : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An existing artifact was produced from a different configuration.
class ConfigMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class Divergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace geolat
