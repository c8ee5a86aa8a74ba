#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flatforge {

// Base class of all recoverable errors. `name()` is the stable identifier the
// CLI prints as `ERROR <name>: <detail>`.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& detail)
        : std::runtime_error(detail), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

struct ParseError : Error {
    std::size_t offset;  // byte offset into the parsed text (or line number for files)
    ParseError(std::size_t off, const std::string& detail)
        : Error("ParseError", detail), offset(off) {}
};

struct UnboundVariable : Error {
    explicit UnboundVariable(const std::string& detail) : Error("UnboundVariable", detail) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& detail) : Error("DomainError", detail) {}
};

struct InconclusiveDomain : Error {
    explicit InconclusiveDomain(const std::string& detail) : Error("InconclusiveDomain", detail) {}
};

struct NoRelativeDegree : Error {
    explicit NoRelativeDegree(const std::string& detail) : Error("NoRelativeDegree", detail) {}
};

struct InconsistentR : Error {
    explicit InconsistentR(const std::string& detail) : Error("InconsistentR", detail) {}
};

struct SingularFeedback : Error {
    explicit SingularFeedback(const std::string& detail) : Error("SingularFeedback", detail) {}
};

struct NewtonDivergence : Error {
    explicit NewtonDivergence(const std::string& detail) : Error("NewtonDivergence", detail) {}
};

struct StructureViolation : Error {
    explicit StructureViolation(const std::string& detail) : Error("StructureViolation", detail) {}
};

struct RankDeficient : Error {
    explicit RankDeficient(const std::string& detail) : Error("RankDeficient", detail) {}
};

struct CountMismatch : Error {
    explicit CountMismatch(const std::string& detail) : Error("CountMismatch", detail) {}
};

struct MissingParameterization : Error {
    explicit MissingParameterization(const std::string& detail)
        : Error("MissingParameterization", detail) {}
};

struct SingularityEncountered : Error {
    explicit SingularityEncountered(const std::string& detail)
        : Error("SingularityEncountered", detail) {}
};

struct RoundTripFailure : Error {
    explicit RoundTripFailure(const std::string& detail) : Error("RoundTripFailure", detail) {}
};

struct CheckFailed : Error {
    explicit CheckFailed(const std::string& detail) : Error("CheckFailed", detail) {}
};

struct UnsupportedAtom : Error {
    explicit UnsupportedAtom(const std::string& detail) : Error("UnsupportedAtom", detail) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& detail) : Error("ValidationError", detail) {}
};

struct IoError : Error {
    explicit IoError(const std::string& detail) : Error("IoError", detail) {}
};

}  // namespace flatforge
