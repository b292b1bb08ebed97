#pragma once

#include <stdexcept>
#include <string>

namespace mindreg {

// Invalid or inconsistent input data: geometry mismatches, empty masks,
// degenerate images, malformed files. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical procedure failed to converge. The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double residual)
        : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
          residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

} // namespace mindreg
