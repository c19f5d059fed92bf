#pragma once

#include <stdexcept>
#include <string>

namespace partaff {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI's stderr JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& m) : Error("shape_mismatch", m) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& m) : Error("domain_error", m) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& m) : Error("validation_error", m) {}
};

class NotASubsequence : public Error {
public:
    explicit NotASubsequence(const std::string& m) : Error("not_a_subsequence", m) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& m) : Error("format_error", m) {}
};

class CapabilityError : public Error {
public:
    explicit CapabilityError(const std::string& m) : Error("capability_error", m) {}
};

/// A pipeline stage failed; `stage()` names it ("stage1" .. "stage4").
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& m)
        : Error("stage_failure", stage + ": " + m), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace partaff
