// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace msvit {

// Invalid or unknown configuration values. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failures (missing files, unwritable directories).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed on-disk data: bad headers, payload size mismatches.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A forward value became NaN/Inf. The message names the producing op.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace msvit
