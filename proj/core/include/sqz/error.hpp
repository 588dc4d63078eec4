#pragma once

#include <stdexcept>
#include <string>

namespace sqz {

// Bad inputs: malformed files, inconsistent dimensions, invalid configs.
// The CLI maps these to exit code 2; everything else exits 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace sqz
