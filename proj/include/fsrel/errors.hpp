#pragma once

#include <stdexcept>
#include <string>

namespace fsrel {

// Base of every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input file (schema violation); the message names the record.
class ParseError : public Error {
public:
    using Error::Error;
};

// Referential or structural invariant broken by otherwise well-formed data.
class IntegrityError : public Error {
public:
    using Error::Error;
};

class VocabularyError : public Error {
public:
    using Error::Error;
};

// Caller broke an operation precondition (empty support set, shape mismatch, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace fsrel
