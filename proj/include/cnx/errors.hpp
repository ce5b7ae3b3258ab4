#pragma once

#include <stdexcept>
#include <string>

namespace cnx {

// Base for every error the toolkit raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Ingestion failures for datasets on disk; message names the file.
class DataError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public LoadError {
 public:
  using LoadError::LoadError;
};

class TruncatedFileError : public LoadError {
 public:
  using LoadError::LoadError;
};

class ChecksumError : public LoadError {
 public:
  using LoadError::LoadError;
};

// A structural precondition of a transformation does not hold (e.g. a
// partially zeroed prune group).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant; always a bug.
class InternalError : public Error {
 public:
  using Error::Error;
};

// Process exit code for an error: 1 usage/config, 2 data/input, 3 invariant violation.
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const LoadError*>(&e) ||
      dynamic_cast<const InputError*>(&e) || dynamic_cast<const DimensionError*>(&e)) {
    return 2;
  }
  return 3;
}

}  // namespace cnx
