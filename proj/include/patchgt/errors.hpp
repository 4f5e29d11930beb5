#pragma once

#include <stdexcept>
#include <string>

namespace patchgt {

// Exit-code mapping lives in cli.cpp: ContractError/IngestError/NumericError/
// ConfigError all terminate a CLI run with status 1; usage problems are status 2.

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Violated precondition or type invariant (bad shapes, out-of-range k, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(what) {}
};

// Malformed or missing input files. Carries file and, when known, line.
struct IngestError : Error {
    IngestError(const std::string& file, const std::string& what)
        : Error(file + ": " + what), file(file) {}
    IngestError(const std::string& file, long line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), file(file), line(line) {}
    std::string file;
    long line = 0;
};

// Iteration caps exceeded, undefined metrics, non-finite results.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(what) {}
};

// Inconsistent run configuration (fold counts vs class support, bad rates, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace patchgt
