#pragma once

#include <stdexcept>
#include <string>

namespace gcl {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete category onto a process exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller violated an operation's input contract (shapes, indices, ranges).
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset coverage or content problem.
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed or version-mismatched file content.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

// Model parameters or losses became non-finite.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Cosine similarity requested for a zero-norm embedding.
class DegenerateEmbeddingError : public Error {
public:
    using Error::Error;
};

// Filesystem failure (cannot open, cannot write).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace gcl
