#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fcshrink {

enum class Errc {
    MissingFile,
    SchemaError,
    DuplicateId,
    ParseError,
    ShapeError,
    NonFinite,
    OutOfRange,
    RankDeficient,
    ShapeMismatch,
    DegenerateColumn,
    LengthError,
    TooFewSubjects,
    MissingReference,
    EmptyCell,
    InvalidParams,
    MissingVisit,
    MissingRun,
    IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
    switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::SchemaError: return "SchemaError";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::ParseError: return "ParseError";
    case Errc::ShapeError: return "ShapeError";
    case Errc::NonFinite: return "NonFinite";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DegenerateColumn: return "DegenerateColumn";
    case Errc::LengthError: return "LengthError";
    case Errc::TooFewSubjects: return "TooFewSubjects";
    case Errc::MissingReference: return "MissingReference";
    case Errc::EmptyCell: return "EmptyCell";
    case Errc::InvalidParams: return "InvalidParams";
    case Errc::MissingVisit: return "MissingVisit";
    case Errc::MissingRun: return "MissingRun";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code
/// that callers (and tests) can switch on.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

    Errc code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

}  // namespace fcshrink
