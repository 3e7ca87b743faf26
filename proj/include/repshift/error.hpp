// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace repshift {

enum class ErrorCode {
    DimensionError,
    NonFinite,
    InvalidArgument,
    FusedIncompatible,
    BadMagic,
    VersionUnsupported,
    ShapeMismatch,
    DigestMismatch,
    ConfigError,
    IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::DimensionError: return "DimensionError";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FusedIncompatible: return "FusedIncompatible";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure the library reports carries a machine-readable category.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }
    std::string_view category() const noexcept { return to_string(m_code); }

private:
    ErrorCode m_code;
};

namespace detail {

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, Args&&... parts) {
    std::ostringstream oss;
    (oss << ... << std::forward<Args>(parts));
    throw Error(code, oss.str());
}

}  // namespace detail

inline constexpr std::string_view kFusedIncompatibleReason =
    "attention-based importance needs the attention map, which fused attention never materializes; "
    "use representation shift or the naive attention path";

}  // namespace repshift
