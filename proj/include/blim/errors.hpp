#pragma once

#include <stdexcept>
#include <string>

namespace blim {

enum class ErrorKind {
  domain,       // argument outside the operation's support
  dimension,    // shape mismatch
  overflow,     // non-finite output from a finite input
  branch_cut,   // principal matrix logarithm does not exist
  unstable,     // drift matrix has an eigenvalue with real part >= 0
  degenerate,   // singular linear system
  not_spd,      // failed Cholesky pivot
  rank,         // rank-deficient regression or decomposition
  divergence,   // simulation or sampler blew up
  io,           // file or parse failure
  config,       // invalid run configuration
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace blim
