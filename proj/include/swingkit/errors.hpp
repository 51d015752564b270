#pragma once

#include <stdexcept>
#include <string>

namespace swingkit {

enum class ErrorKind {
  syntax,        // malformed input text
  dangling_ref,  // record references a bus id that does not exist
  duplicate,     // duplicate bus id / conflicting records
  structural,    // network structure unusable (islanded KM block, zero-impedance branch, ...)
  divergence,    // iterative solve failed to converge
  singular,      // singular Jacobian / defective eigenproblem
  degenerate,    // ill-posed fit (near-zero denominator, rank collapse)
  domain,        // argument outside the documented domain
  config,        // inconsistent configuration of a run
  unsupported,   // requested feature intentionally out of scope
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) fail(kind, msg);
}

}  // namespace swingkit
