#pragma once

#include <stdexcept>
#include <string>

namespace fpvit {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError/usage -> 1, data & format errors -> 2, numeric/training -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& msg, int line)
        : Error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    explicit ParseError(const std::string& msg) : Error(msg), line_number(-1) {}
    int line_number;
};

struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ProtocolError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

struct GenerationError : Error {
    using Error::Error;
};

}  // namespace fpvit
