#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace fairpairs {

using json = nlohmann::json;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// File could not be opened, read, or written.
class IoError : public Error {
  public:
    using Error::Error;
};

// Structured input (CSV, JSON, JSONL) did not match its schema.
class FormatError : public Error {
  public:
    using Error::Error;
};

// A backend was asked for something its capability descriptor does not offer.
class CapabilityError : public Error {
  public:
    using Error::Error;
};

// Caller violated a documented precondition.
class PreconditionError : public Error {
  public:
    using Error::Error;
};

} // namespace fairpairs
