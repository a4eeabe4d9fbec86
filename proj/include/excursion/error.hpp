/**
 * Exception types shared by every excursion module.
 *
 * The CLI maps these onto exit codes, so each failure class gets its own
 * type rather than a message convention.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace excursion {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- ingestion -------------------------------------------------------------

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// ---- design ----------------------------------------------------------------

class WeightPlanError : public Error {
 public:
  using Error::Error;
};

class LagWindowError : public Error {
 public:
  using Error::Error;
};

class PairingError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

// ---- estimation ------------------------------------------------------------

/// Rank-deficient weighted Gram matrix.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// (I - H) too ill-conditioned for the small-sample adjustment.
class AdjustmentError : public Error {
 public:
  using Error::Error;
};

/// Not enough clusters, or clusters too small for pairs.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class InferenceError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// ---- simulation / replication / config -------------------------------------

class UnsupportedAnalyticsError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ReplicationError : public Error {
 public:
  using Error::Error;
};

}  // namespace excursion
