#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace qfk {

namespace detail {

// compact magnitude formatting for error messages
inline std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", x);
    return buf;
}

}  // namespace detail

// Base class for all library errors so callers can catch qfk failures
// separately from std errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Rational evaluation hit a (near-)zero denominator.
struct PoleError : Error {
    explicit PoleError(const std::string& msg) : Error(msg) {}
};

// Polynomial arithmetic would exceed the configured total-degree cap.
struct DegreeOverflow : Error {
    explicit DegreeOverflow(const std::string& msg) : Error(msg) {}
};

// Input connection or line-bundle curvature has a nonzero pure part.
struct Type11Violation : Error {
    explicit Type11Violation(const std::string& msg) : Error(msg) {}
};

// ODE step-size monitor failed to reach the requested accuracy.
struct StepError : Error {
    explicit StepError(const std::string& msg) : Error(msg) {}
};

// Blow-down inversion failed: covector is not proportional to any
// evaluation row within the working domain.
struct NotDecomposable : Error {
    explicit NotDecomposable(const std::string& msg) : Error(msg) {}
};

// The zero covector has no preimage under the evaluation maps.
struct ZeroSection : Error {
    explicit ZeroSection(const std::string& msg) : Error(msg) {}
};

struct NewtonDivergence : Error {
    explicit NewtonDivergence(const std::string& msg) : Error(msg) {}
};

// Numerical rank differs from the expected one (degenerate instance).
struct RankError : Error {
    explicit RankError(const std::string& msg) : Error(msg) {}
};

// Quaternion relations fail beyond tolerance.
struct RelationError : Error {
    explicit RelationError(const std::string& msg) : Error(msg) {}
};

struct FrameError : Error {
    explicit FrameError(const std::string& msg) : Error(msg) {}
};

// Finite-difference stencil leaves the sampled grid.
struct GridError : Error {
    explicit GridError(const std::string& msg) : Error(msg) {}
};

// No hypersurface intersection root inside the chart disk.
struct IntersectionError : Error {
    explicit IntersectionError(const std::string& msg) : Error(msg) {}
};

// Pointwise linear system for gamma is singular or inconsistent.
struct SingularSystem : Error {
    explicit SingularSystem(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t line, std::size_t col)
        : Error(msg + " (line " + std::to_string(line) + ", col " + std::to_string(col) + ")"),
          line(line), col(col) {}
    explicit ParseError(const std::string& msg) : Error(msg), line(0), col(0) {}
    std::size_t line, col;
};

}  // namespace qfk
