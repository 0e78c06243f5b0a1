#pragma once

#include <stdexcept>

namespace slm {

/// Malformed or unusable data file (audio, checkpoint, feature dump).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: configuration, missing paths, unknown options.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace slm
