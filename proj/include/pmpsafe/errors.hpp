#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pmpsafe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// State outside the region where a model is defined (singular denominators, V below V_min, ...).
class DomainError : public Error
{
public:
  using Error::Error;
};

/// Invalid configuration or parameter values.
class ConfigError : public Error
{
public:
  using Error::Error;
};

/// The maximizer of v'u over a strictly convex set is not unique because v is (numerically) zero.
class SingularDirection : public Error
{
public:
  using Error::Error;
};

/// The Hamiltonian left its tolerance band while integrating an extremal.
class IntegrationDrift : public Error
{
public:
  IntegrationDrift(const std::string & what, std::size_t node, double value)
      : Error(what), node_(node), value_(value)
  {}
  std::size_t node() const noexcept { return node_; }
  double value() const noexcept { return value_; }

private:
  std::size_t node_;
  double value_;
};

class InsufficientBoundaryPoints : public Error
{
public:
  using Error::Error;
};

/// NaN or Inf detected while time-marching a grid solution.
class NumericalBlowup : public Error
{
public:
  NumericalBlowup(const std::string & what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Query outside the domain of a value source. Value sources never clamp silently.
class ExtrapolationError : public Error
{
public:
  using Error::Error;
};

class TrainingDiverged : public Error
{
public:
  using Error::Error;
};

/// No initial state with a non-negative value was found.
class DegenerateSafeSet : public Error
{
public:
  using Error::Error;
};

/// File or log written with an incompatible schema.
class VersionError : public Error
{
public:
  using Error::Error;
};

}  // namespace pmpsafe
