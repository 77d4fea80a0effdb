#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlw {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape disagreement between tensors; `tensor()` names the offending operand.
class DimensionError : public Error {
public:
    DimensionError(std::string tensor, const std::string& what)
        : Error("dimension mismatch in '" + tensor + "': " + what), tensor_(std::move(tensor)) {}
    const std::string& tensor() const noexcept { return tensor_; }

private:
    std::string tensor_;
};

/// A NaN or infinity showed up where a finite value is required.
/// `where()` is a parameter name, layer tag or epoch tag depending on the raiser.
class NonFiniteError : public Error {
public:
    NonFiniteError(std::string where, const std::string& what)
        : Error("non-finite value at " + where + ": " + what), where_(std::move(where)) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

class ParseError : public Error {
public:
    ParseError(std::string path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), path_(std::move(path)), line_(line) {}
    std::size_t line() const noexcept { return line_; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
    std::size_t line_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Non-finite density ratios; carries the control unit ids that produced them.
class WeightError : public Error {
public:
    WeightError(const std::string& what, std::vector<std::size_t> units)
        : Error(what), units_(std::move(units)) {}
    const std::vector<std::size_t>& units() const noexcept { return units_; }

private:
    std::vector<std::size_t> units_;
};

class IoError : public Error {
public:
    IoError(std::string path, const std::string& what) : Error(path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace dlw
