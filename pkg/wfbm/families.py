#!/usr/bin/env python3
import math
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from wfbm.errors import DomainError
from wfbm.kernel import gaussian_expectation

Fn = Callable[[np.ndarray], np.ndarray]


class FunctionSpec:
  def __init__(self, name: str, kind: str, f: Fn, fprime: Optional[Fn] = None, fsecond: Optional[Fn] = None,
               support: Optional[tuple[float, float]] = None, lipschitz: float = math.inf, jump: Optional[float] = None):
    self.name = name
    self.kind = kind
    self.f = f
    self.fprime = fprime
    self.fsecond = fsecond
    # f vanishes outside support; either end may be infinite
    self.support = support
    self.lipschitz = lipschitz
    # location of a unit upward jump (step functions only)
    self.jump = jump

  def __repr__(self) -> str:
    return f"FunctionSpec({self.name!r}, kind={self.kind!r})"

  def __call__(self, x):
    return self.f(np.asarray(x, dtype=float))

  @property
  def compact(self) -> bool:
    return self.support is not None and all(math.isfinite(v) for v in self.support)

  @property
  def differentiable(self) -> bool:
    return self.fprime is not None

  def derivative(self) -> "FunctionSpec":
    if self.fprime is None:
      raise DomainError(f"{self.name} has no derivative in the registry")
    return FunctionSpec(self.name + "'", self.kind, self.fprime, self.fsecond, None, self.support)

  def mean(self, var) -> np.ndarray:
    """E f(X), X ~ N(0, var)"""
    if self.jump is not None:
      return _normal_tail(self.jump, var)
    return gaussian_expectation(self.f, var, support=self.support)

  def mean_square(self, var) -> np.ndarray:
    if self.jump is not None:
      return _normal_tail(self.jump, var)
    return gaussian_expectation(lambda x: self.f(x) ** 2, var, support=self.support)

  def mean_derivative(self, var) -> np.ndarray:
    """E f'(X), X ~ N(0, var); for a step this is the density at the jump"""
    if self.jump is not None:
      var = np.asarray(var, dtype=float)
      return np.exp(-self.jump ** 2 / (2. * var)) / np.sqrt(2. * math.pi * var)
    if self.fprime is None:
      raise DomainError(f"{self.name} has no derivative in the registry")
    return gaussian_expectation(self.fprime, var, support=self.support)


def _normal_tail(x0: float, var) -> np.ndarray:
  var = np.asarray(var, dtype=float)
  return ndtr(-x0 / np.sqrt(var))


def constant(c: float = 1.) -> FunctionSpec:
  return FunctionSpec("constant", "constant", lambda x: np.full_like(x, c, dtype=float), lambda x: np.zeros_like(x, dtype=float),
                      lambda x: np.zeros_like(x, dtype=float), lipschitz=0.)


def power(k: int, name: str) -> FunctionSpec:
  return FunctionSpec(name, "polynomial",
                      lambda x: x ** k,
                      lambda x: k * x ** (k - 1) if k > 1 else np.ones_like(x, dtype=float),
                      lambda x: k * (k - 1) * x ** (k - 2) if k > 2 else np.full_like(x, k * (k - 1), dtype=float),
                      lipschitz=1. if k == 1 else math.inf)


def bump(center: float, width: float, name: str) -> FunctionSpec:
  """(1 - u^2)^3 on |u| < 1 with u = (x - center) / width; C2 with compact support"""
  def inside(x):
    u = (x - center) / width
    return u, np.abs(u) < 1.

  def f(x):
    u, m = inside(x)
    return np.where(m, (1. - u ** 2) ** 3, 0.)

  def fprime(x):
    u, m = inside(x)
    return np.where(m, -6. * u * (1. - u ** 2) ** 2 / width, 0.)

  def fsecond(x):
    u, m = inside(x)
    return np.where(m, (1. - u ** 2) * (30. * u ** 2 - 6.) / width ** 2, 0.)

  # max |d/du (1-u^2)^3| is at u^2 = 1/5
  lip = 6. / math.sqrt(5.) * (4. / 5.) ** 2 / width
  return FunctionSpec(name, "bump", f, fprime, fsecond, support=(center - width, center + width), lipschitz=lip)


def step_at(x0: float, name: str = "step") -> FunctionSpec:
  """1_{(x0, inf)}"""
  return FunctionSpec(name, "step", lambda x: (x > x0).astype(float), support=(x0, math.inf), jump=x0)


def truncated_identity(bound: float, name: str) -> FunctionSpec:
  return FunctionSpec(name, "truncated", lambda x: np.where(np.abs(x) <= bound, x, 0.), support=(-bound, bound))


def cosine() -> FunctionSpec:
  return FunctionSpec("cos", "smooth", np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), lipschitz=1.)


families: dict[str, tuple] = {
  # name: (constructor, args)
  "constant": (constant, (1.,)),
  "identity": (power, (1, "identity")),
  "square": (power, (2, "square")),
  "cube": (power, (3, "cube")),
  "cos": (cosine, ()),
  "step": (step_at, (0.,)),
  "truncated_identity": (truncated_identity, (3., "truncated_identity")),
  # C2 bumps at different scales and shifts
  "bump": (bump, (0., 1., "bump")),
  "bump_narrow": (bump, (0., .5, "bump_narrow")),
  "bump_wide": (bump, (.3, 2., "bump_wide")),
  "bump_left": (bump, (-.7, .8, "bump_left")),
  "bump_right": (bump, (.5, 1.2, "bump_right")),
}

BUMPS = ("bump", "bump_narrow", "bump_wide", "bump_left", "bump_right")

FAMILY_LIST = {name: ctor(*args) for name, (ctor, args) in families.items()}


def get_family(name: str) -> FunctionSpec:
  try:
    return FAMILY_LIST[name]
  except KeyError:
    raise DomainError(f"unknown function family {name!r}, expected one of {sorted(FAMILY_LIST)}") from None


def build_table() -> str:
  h = "name,kind,support,lipschitz\n"
  for name, spec in FAMILY_LIST.items():
    support = "" if spec.support is None else f"{spec.support[0]}:{spec.support[1]}"
    h += f"{name},{spec.kind},{support},{spec.lipschitz}\n"
  return h


if __name__ == "__main__":
  print(build_table(), end="")
