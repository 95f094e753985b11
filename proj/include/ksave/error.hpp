#ifndef KSAVE_ERROR_HPP
#define KSAVE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ksave {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad shape, nonpositive bandwidth, ...).
class InvalidArgument : public Error {
public:
  using Error::Error;
};

class NearSingularCovariance : public Error {
public:
  using Error::Error;
};

class EigendecompositionFailure : public Error {
public:
  using Error::Error;
};

class RankDeficient : public Error {
public:
  using Error::Error;
};

/// Brute-force reference asked to run on a sample beyond its size guard.
class SampleTooLarge : public Error {
public:
  using Error::Error;
};

class InsufficientData : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

namespace detail {
inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}
} // namespace detail

} // namespace ksave

#endif // KSAVE_ERROR_HPP
