#pragma once

#include <stdexcept>
#include <string>

namespace han {

// Shape/contract violations in numeric code.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied values (configs, masks, ids).
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite losses or gradients during optimization.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Problems reading/validating on-disk data.
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace han
