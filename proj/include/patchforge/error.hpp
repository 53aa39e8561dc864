#pragma once

#include <stdexcept>
#include <string>

namespace patchforge {

// Base for every failure the library reports. Operational errors (I/O,
// validation, transport) all derive from this so callers can catch once.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Store metadata violates a SlideRecord / StoreIndex invariant.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Network or disk read failed; retrying may succeed.
class TransportError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

// Binary or text file does not match its declared layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class OutOfBoundsError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchforge
