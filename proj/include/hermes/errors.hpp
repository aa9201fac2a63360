#pragma once

#include <stdexcept>
#include <string>

namespace hermes {

// Error taxonomy shared by every module. All failures are thrown; the CLI
// maps Infeasible -> exit 2 and IntegrityError -> exit 3.

struct InvalidConfig : std::runtime_error {
    explicit InvalidConfig(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct OutOfRange : std::runtime_error {
    explicit OutOfRange(const std::string& msg) : std::runtime_error(msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : std::runtime_error {
    explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Infeasible : std::runtime_error {
    explicit Infeasible(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidModel : std::runtime_error {
    explicit InvalidModel(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal bug guard: duplicate signals, double free in the ledger, etc.
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hermes
