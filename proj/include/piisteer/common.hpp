#ifndef PIISTEER_COMMON_HPP_
#define PIISTEER_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace piisteer {

// Activations are stored one token per row so that per-position edits and
// cache appends touch contiguous memory.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using VectorF = Vector<float>;
using VectorD = Vector<double>;

using TokenId = int;

// Error taxonomy. Each maps to one failure class named in the module
// contracts; callers catch the base when they only need a message.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct InterventionError : Error {
  using Error::Error;
};
struct CompatibilityError : Error {
  using Error::Error;
};
struct AnnotationError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

}  // namespace piisteer

#endif  // PIISTEER_COMMON_HPP_
