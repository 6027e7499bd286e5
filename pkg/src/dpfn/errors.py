"""Exception types raised across the package."""


class ConfigurationError(ValueError):
  """A parameter or configuration value is outside its valid range."""


class DegenerateEvidenceError(ArithmeticError):
  """Every trace has zero probability, so the posterior cannot be normalized."""


class DataIntegrityError(ValueError):
  """Input data references something that does not exist (e.g. an unknown user)."""


class OutOfRegimeError(ValueError):
  """A calibration formula was asked for a parameter outside its validity range."""
