#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace otmil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Numerical failure inside a solver. The CLI maps these to exit code 2;
// everything else (usage, parsing, I/O) maps to exit code 1.
class SolverError : public std::runtime_error {
 public:
  enum class Kind { KernelUnderflow, NonConvergence, Diverged };

  SolverError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class IoError : public std::runtime_error {
 public:
  enum class Code {
    Missing,
    BadMagic,
    BadVersion,
    Truncated,
    ChecksumMismatch,
    Malformed,
  };

  IoError(Code code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

// Carries the offending 1-based line number when it is known (0 otherwise).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")"
                                    : what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace otmil
