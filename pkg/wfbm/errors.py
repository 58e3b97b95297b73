class WfbmError(Exception):
  pass


class ConfigError(WfbmError, ValueError):
  """Invalid input: the CLI maps these to exit code 2"""


class ParamOutOfRegion(ConfigError):
  def __init__(self, a: float, b: float, inequality: str):
    super().__init__(f"(a={a}, b={b}) violates {inequality}")
    self.a = a
    self.b = b
    self.inequality = inequality


class DomainError(ConfigError):
  pass


class GridError(ConfigError):
  pass


class NumericalError(WfbmError, ArithmeticError):
  """Numerical failure: the CLI maps these to exit code 3"""


class NotPositiveDefinite(NumericalError):
  pass


class EdgeMassError(NumericalError):
  pass


class NormInfinite(NumericalError):
  pass
