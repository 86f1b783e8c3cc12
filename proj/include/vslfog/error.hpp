#pragma once

#include <stdexcept>
#include <string>

namespace vslfog {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind { parse = 2, infeasible = 3, horizon = 4, usage = 5 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

struct ParseError : Error {
  explicit ParseError(const std::string& what) : Error(ErrorKind::parse, what) {}
};

struct InfeasibleError : Error {
  explicit InfeasibleError(const std::string& what) : Error(ErrorKind::infeasible, what) {}
};

struct HorizonError : Error {
  explicit HorizonError(const std::string& what) : Error(ErrorKind::horizon, what) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace vslfog
