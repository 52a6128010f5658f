// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace mmloc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MMLOC_ERROR(Name)                     \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    };

MMLOC_ERROR(EmptyChannel)
MMLOC_ERROR(DelayOverflow)
MMLOC_ERROR(ConfigError)
MMLOC_ERROR(SingularCombiner)
MMLOC_ERROR(ShapeMismatch)
MMLOC_ERROR(SizeCap)
MMLOC_ERROR(DomainError)
MMLOC_ERROR(DegenerateGeometry)
MMLOC_ERROR(SingularSystem)
MMLOC_ERROR(NoValidCombination)
MMLOC_ERROR(SchemaError)

#undef MMLOC_ERROR

// Non-fatal conditions (residual growth, clipped inputs, dropped paths).
// Default handler prints to stderr; tests install their own to count them.
enum class Warning { Convergence, Clipped, DroppedPath };

using WarningHandler = std::function<void(Warning, const std::string&)>;

void set_warning_handler(WarningHandler h);
void warn(Warning kind, const std::string& msg);

}  // namespace mmloc
