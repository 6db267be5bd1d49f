#pragma once

#include <stdexcept>
#include <string>

namespace noisy_esn
{

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// A parameter violates a documented invariant.
class ParameterError : public Error
{
  public:
    using Error::Error;
};

/// Non-finite value or overflow produced during a computation.
class NumericError : public Error
{
  public:
    using Error::Error;
};

/// Matrix or vector dimensions do not fit together.
class ShapeError : public Error
{
  public:
    using Error::Error;
};

/// Requested slice does not fit inside the series.
class SliceError : public Error
{
  public:
    using Error::Error;
};

/// Operation needs a trained model (or other state) that is absent.
class StateError : public Error
{
  public:
    using Error::Error;
};

/// Linear solve failed.
class SolverError : public Error
{
  public:
    using Error::Error;
};

/// Spectral-radius rescaling impossible (zero spectral radius).
class ScalingError : public ParameterError
{
  public:
    using ParameterError::ParameterError;
};

/// Malformed or unreadable persisted file.
class FormatError : public Error
{
  public:
    using Error::Error;
};

} // namespace noisy_esn
