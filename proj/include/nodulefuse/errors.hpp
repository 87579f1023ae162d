#pragma once

#include <stdexcept>
#include <string>

namespace nf {

/// Bad input data: failed validation, malformed file, corrupt container.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Input follows a schema or format version this tool does not understand.
class UnsupportedSchemaError : public DataError {
public:
    explicit UnsupportedSchemaError(const std::string& what) : DataError(what) {}
};

/// A required artifact from an earlier pipeline stage is missing.
class PrereqError : public std::runtime_error {
public:
    explicit PrereqError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace nf
