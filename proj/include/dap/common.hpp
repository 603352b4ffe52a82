#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

namespace dap {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecList = std::vector<Vec>;

// Selects the reference (serial) or OpenMP implementation of a data-parallel
// kernel. Both produce the same values; serial is what the tests trust.
enum class Exec { serial, parallel };

// Error hierarchy. The CLI maps each kind to its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad invocation (unknown flag, missing file list, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// A precondition or invariant of some module was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Training diverged, a NaN escaped, a decomposition failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

inline void require_finite(const Vec& v, const char* name) {
  if (!v.allFinite()) throw ValidationError(std::string(name) + " has non-finite entries");
}

inline void require_same_dim(const Vec& a, const Vec& b, const char* where) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(where) + ": dimension mismatch (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  }
}

// 64-bit FNV-1a, used for config and artifact fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// Exceptions must not escape an OpenMP region. Loop bodies run through
// run(); the first exception is kept and rethrown after the region.
class FirstError {
 public:
  template <class F>
  void run(F&& body) noexcept {
    try {
      body();
    } catch (...) {
#pragma omp critical(dap_first_error)
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

}  // namespace dap
