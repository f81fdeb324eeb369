#pragma once

#include <stdexcept>
#include <string>

namespace tags {

/// Precondition or shape-contract violation by the caller.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf surfaced in activations or losses.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Strategy-based point selection was asked to pick points in an empty lesion mask.
class NoLesionError : public std::runtime_error {
public:
    NoLesionError() : std::runtime_error("no lesion: tumor mask is empty") {}
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tags
