#pragma once

#include <stdexcept>
#include <string>

namespace p2pfl {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration value violates a documented invariant.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A configuration document has the wrong shape (unknown key, wrong type).
class SchemaError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Raised when an input file (CSV dataset, model blob) is malformed.
class IngestionError : public Error {
public:
    using Error::Error;
};

class UndefinedValueError : public Error {
public:
    using Error::Error;
};

class NumericalDivergenceError : public Error {
public:
    using Error::Error;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

class GeneratorEmptyError : public Error {
public:
    using Error::Error;
};

class InternalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace p2pfl
