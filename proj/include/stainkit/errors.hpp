#pragma once

#include <stdexcept>
#include <string>

namespace stainkit {

// Base for all library errors. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Precondition or shape violation on an operation's inputs.
class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

// Too few tissue pixels to fit a stain model.
class InsufficientTissue : public Error {
public:
    explicit InsufficientTissue(const std::string& msg) : Error(msg) {}
};

class NotFound : public Error {
public:
    explicit NotFound(const std::string& msg) : Error(msg) {}
};

// Unreadable or unsupported file content.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Malformed manifest/CSV content; carries a line number when known.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg, long line = -1)
        : Error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg), line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

}  // namespace stainkit
