#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace specdown {

/// Base of every error raised by the library. `code()` is a short stable
/// identifier used in the CLI's machine-readable error report.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error("domain_error", what) {}
};

struct SymmetryViolation : Error {
    explicit SymmetryViolation(const std::string& what) : Error("symmetry_violation", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& what) : Error("parse_error", what) {}
};

struct NotPositiveDefinite : Error {
    NotPositiveDefinite(const std::string& what, double min_eigenvalue)
        : Error("not_positive_definite", what), min_eigenvalue(min_eigenvalue) {}
    double min_eigenvalue;
};

struct RankDeficient : Error {
    explicit RankDeficient(const std::string& what) : Error("rank_deficient", what) {}
};

inline void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

}  // namespace specdown
