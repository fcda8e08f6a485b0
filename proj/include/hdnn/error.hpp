#pragma once

#include <stdexcept>
#include <string>

namespace hdnn {

enum class ErrorKind {
  kInvalidArgument,
  kShape,
  kInvalidArchitecture,
  kDegenerateLattice,
  kChecksum,
  kVersion,
  kIo,
  kParse,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace hdnn
