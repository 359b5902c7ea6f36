// Copyright (C) 2026 tpkv authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>

namespace tpkv {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller handed us data that can never be valid (NaN input, dimension mismatch).
struct InvalidInput : Error { using Error::Error; };

// A configuration value is out of its documented domain.
struct ConfigError : Error { using Error::Error; };

// A state-machine rule was broken (chunk out of order, decision on a dead token).
struct ProtocolError : Error { using Error::Error; };

// A trace file is malformed: bad magic, bad version, truncation, junk trailer.
struct FormatError : Error { using Error::Error; };

// The filesystem said no.
struct IoError : Error { using Error::Error; };

// A brute-force enumeration would exceed its budget.
struct EnumerationTooLarge : Error { using Error::Error; };

// An invariant the design guarantees was observed broken at runtime.
struct ImpossibleState : Error { using Error::Error; };

// A soundness check requested by the caller failed.
struct VerificationError : Error { using Error::Error; };

}  // namespace tpkv
