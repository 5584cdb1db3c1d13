#ifndef PXST_ERRORS_HPP
#define PXST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pxst {

// Base class for everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data is absent, malformed or inconsistent (CLI exit code 2).
class DataError : public Error {
public:
    using Error::Error;
};

class MissingDataset : public DataError {
public:
    explicit MissingDataset(const std::string &path)
        : DataError("missing dataset: " + path), path_(path) {}
    const std::string &path() const { return path_; }

private:
    std::string path_;
};

class ShapeMismatch : public DataError {
public:
    ShapeMismatch(const std::string &what, const std::string &expected, const std::string &found)
        : DataError("shape mismatch for " + what + ": expected " + expected + ", found " + found) {}
};

class ReadOnlyFile : public DataError {
public:
    explicit ReadOnlyFile(const std::string &path) : DataError("file is read-only: " + path) {}
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

// Caller passed arguments that violate a precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// A numerical procedure could not produce a usable answer (CLI exit code 3).
class NumericalError : public Error {
public:
    using Error::Error;
};

class SamplingViolation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace pxst

#endif
