// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lvslam {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BehindCamera : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct ShapeMismatch : Error {
    using Error::Error;
};
struct EmptyInput : Error {
    using Error::Error;
};
struct EmptyPixelSet : Error {
    using Error::Error;
};
struct StateMismatch : Error {
    using Error::Error;
};
struct Diverged : Error {
    using Error::Error;
};
struct LengthMismatch : Error {
    using Error::Error;
};
struct DegenerateTrajectory : Error {
    using Error::Error;
};
struct TooSmall : Error {
    using Error::Error;
};

// io
struct IoFailure : Error {
    using Error::Error;
};
struct MissingFile : Error {
    using Error::Error;
};
struct MalformedScan : Error {
    using Error::Error;
};
struct BadMagic : Error {
    using Error::Error;
};
struct TruncatedFile : Error {
    using Error::Error;
};
struct CalibrationParseError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace lvslam
