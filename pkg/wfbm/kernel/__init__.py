"""Exact analytic layer for the weighted fractional Brownian motion B^{a,b}.

Everything here is a pure function of its arguments. Time and level arguments
broadcast like numpy arrays; scalar inputs give Python floats back.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate, special

from wfbm.errors import DomainError, ParamOutOfRegion

LOGGER = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

KERNEL_TOL = 1e-10
ORACLE_TOL = 1e-6
ROUNDOFF = 1e-12

SQRT_2_OVER_PI = math.sqrt(2. / math.pi)


def _out(val: np.ndarray) -> ArrayLike:
  val = np.asarray(val)
  return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class RegimeFlags:
  # -1 < b < 0: the existence theory of the bracket on the H space
  qcov_regime: bool
  # -1 < a+b < 3: joint continuity of the local time
  localtime_regime: bool


@dataclass(frozen=True)
class ProcessParams:
  a: float
  b: float
  kappa: float = field(init=False, repr=False)
  hurst_like: float = field(init=False, repr=False)
  beta: float = field(init=False, repr=False)
  flags: RegimeFlags = field(init=False, repr=False)

  def __post_init__(self):
    a, b = float(self.a), float(self.b)
    if not math.isfinite(a) or not a > -1.:
      raise ParamOutOfRegion(a, b, "a > -1")
    if not math.isfinite(b) or not abs(b) < 1.:
      raise ParamOutOfRegion(a, b, "|b| < 1")
    if not abs(b) < 1. + a:
      raise ParamOutOfRegion(a, b, "|b| < 1 + a")

    beta = beta_complete(a + 1., b + 1.)
    kappa = 1. / ((1. + b) * beta)
    if not (math.isfinite(kappa) and kappa > 0.):
      raise ParamOutOfRegion(a, b, "finite positive kappa")

    object.__setattr__(self, "a", a)
    object.__setattr__(self, "b", b)
    object.__setattr__(self, "beta", beta)
    object.__setattr__(self, "kappa", kappa)
    object.__setattr__(self, "hurst_like", (1. + a + b) / 2.)
    object.__setattr__(self, "flags", RegimeFlags(qcov_regime=-1. < b < 0.,
                                                  localtime_regime=-1. < a + b < 3.))

  @property
  def order(self) -> float:
    """Exponent of the variance: E[B_t^2] = t^order"""
    return 1. + self.a + self.b


def validate_params(a: float, b: float) -> ProcessParams:
  return ProcessParams(a, b)


def beta_complete(p: float, q: float) -> float:
  if not (p > 0. and q > 0.):
    raise DomainError(f"beta_complete needs p, q > 0, got ({p}, {q})")
  if p + q < 150.:
    return float(special.beta(p, q))
  return math.exp(special.betaln(p, q))


def _weighted_beta_quad(x: float, a: float, b: float, tol: float) -> float:
  # split at 1/2; u = w^(1/(1+a)) near 0 and 1-u = w^(1/(1+b)) near 1 turn
  # both endpoint singularities into bounded integrands
  opts = dict(epsabs=0., epsrel=tol, limit=200)
  head = min(x, .5)
  left, _ = integrate.quad(lambda w: (1. - w ** (1. / (1. + a))) ** b, 0., head ** (1. + a), **opts)
  total = left / (1. + a)
  if x > .5:
    right, _ = integrate.quad(lambda w: (1. - w ** (1. / (1. + b))) ** a, (1. - x) ** (1. + b), .5 ** (1. + b), **opts)
    total += right / (1. + b)
  return total


def weighted_beta_integral(x: ArrayLike, a: float, b: float, method: str = "special", tol: float = KERNEL_TOL) -> ArrayLike:
  """G(x; a, b) = int_0^x u^a (1-u)^b du for 0 <= x <= 1"""
  if not (a > -1. and b > -1.):
    raise DomainError(f"weighted_beta_integral needs a, b > -1, got ({a}, {b})")
  xs = np.asarray(x, dtype=float)
  if np.any(~np.isfinite(xs)) or np.any(xs < 0.) or np.any(xs > 1.):
    raise DomainError("weighted_beta_integral needs 0 <= x <= 1")

  if method == "special":
    val = special.betainc(a + 1., b + 1., xs) * beta_complete(a + 1., b + 1.)
  elif method == "quad":
    val = np.vectorize(lambda v: _weighted_beta_quad(float(v), a, b, tol), otypes=[float])(xs)
  else:
    raise DomainError(f"unknown method {method!r}")
  return _out(val)


def _times(*args: ArrayLike, positive: bool = False) -> list[np.ndarray]:
  arrs = np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in args])
  for v in arrs:
    if np.any(~np.isfinite(v)):
      raise DomainError("times must be finite")
    if positive and np.any(v <= 0.):
      raise DomainError("times must be > 0")
    if np.any(v < 0.):
      raise DomainError("times must be >= 0")
  return arrs


def _ordered(t: np.ndarray, s: np.ndarray):
  hi = np.maximum(t, s)
  lo = np.minimum(t, s)
  ratio = np.divide(lo, hi, out=np.zeros_like(hi), where=hi > 0.)
  return hi, lo, ratio


def covariance(p: ProcessParams, t: ArrayLike, s: ArrayLike) -> ArrayLike:
  """R^{a,b}(t, s), reduced to incomplete Beta integrals"""
  t, s = _times(t, s)
  hi, lo, ratio = _ordered(t, s)
  g = weighted_beta_integral(ratio, p.a, p.b)
  val = (hi ** p.order * g + lo ** p.order * p.beta) / (2. * p.beta)
  return _out(val)


def increment_variance(p: ProcessParams, t: ArrayLike, s: ArrayLike) -> ArrayLike:
  """Q(t, s) = E[(B_t - B_s)^2]"""
  t, s = _times(t, s)
  hi, lo, _ = _ordered(t, s)
  # for t > s, Q = (1/B) int_s^t u^a (t-u)^b du = t^order * I_{1-s/t}(1+b, 1+a)
  gap = np.divide(hi - lo, hi, out=np.zeros_like(hi), where=hi > 0.)
  val = hi ** p.order * special.betainc(1. + p.b, 1. + p.a, gap)
  return _out(val)


def _sqrt_gap(p: ProcessParams, hi: np.ndarray, ratio: np.ndarray) -> np.ndarray:
  # sqrt(R(t,t) R(s,s)) - R(t,s) for t = hi, s = ratio * hi, without cancellation
  tail = special.betainc(1. + p.b, 1. + p.a, 1. - ratio)
  with np.errstate(divide="ignore"):
    lead = -np.expm1(.5 * p.order * np.log(ratio))
  return hi ** p.order * (.5 * tail - .5 * lead ** 2)


def rho_squared(p: ProcessParams, t: ArrayLike, s: ArrayLike) -> ArrayLike:
  """(ts)^{1+a+b} - R(t,s)^2, the determinant of the covariance of (B_t, B_s)"""
  t, s = _times(t, s, positive=True)
  hi, lo, ratio = _ordered(t, s)
  root = (hi * lo) ** (.5 * p.order)
  gap = _sqrt_gap(p, hi, ratio)
  if np.any(gap < -ROUNDOFF * root):
    LOGGER.debug("rho_squared: clamped negative gap %g", float(np.min(gap / root)))
  gap = np.maximum(gap, 0.)
  val = gap * (2. * root - gap)
  return _out(val)


def cross_covariance(p: ProcessParams, t: ArrayLike, s: ArrayLike, t2: ArrayLike, s2: ArrayLike) -> ArrayLike:
  """E[(B_t - B_s)(B_t2 - B_s2)]"""
  t, s, t2, s2 = _times(t, s, t2, s2)
  val = covariance(p, t, t2) - covariance(p, t, s2) - covariance(p, s, t2) + covariance(p, s, s2)
  return _out(val)


def increment_excess(p: ProcessParams, s: ArrayLike, eps: ArrayLike) -> ArrayLike:
  """h_s(eps) = Q(s+eps, s) - kappa eps^{1+b} s^a"""
  s, eps = _times(s, eps, positive=True)
  val = np.asarray(increment_variance(p, s + eps, s)) - p.kappa * eps ** (1. + p.b) * s ** p.a
  return _out(val)


def increment_excess_bound(p: ProcessParams, s: ArrayLike, eps: ArrayLike) -> ArrayLike:
  """Shape of the bound on |h_s(eps)|, constant omitted"""
  s, eps = _times(s, eps, positive=True)
  a, b = p.a, p.b
  if a > 1.:
    val = (s + eps) ** (a - 1.) * eps ** (2. + b)
  elif a >= 0.:
    val = eps ** (1. + a + b)
  else:
    nu = .5 * (1. + a)
    val = s ** (a - nu) * eps ** (1. + b + nu)
  return _out(val)


def _normal_scale(p: ProcessParams, t: ArrayLike) -> np.ndarray:
  t, = _times(t, positive=True)
  return np.sqrt(t ** p.order)


def expected_abs_deviation(p: ProcessParams, t: ArrayLike, x: ArrayLike) -> ArrayLike:
  """E|B_t - x|"""
  sigma = _normal_scale(p, t)
  x = np.asarray(x, dtype=float)
  val = sigma * SQRT_2_OVER_PI * np.exp(-x ** 2 / (2. * sigma ** 2)) + x * (1. - 2. * special.ndtr(-x / sigma))
  return _out(val)


def expected_positive_part(p: ProcessParams, t: ArrayLike, x: ArrayLike) -> ArrayLike:
  """E(B_t - x)^+"""
  sigma = _normal_scale(p, t)
  x = np.asarray(x, dtype=float)
  val = sigma * np.exp(-x ** 2 / (2. * sigma ** 2)) / math.sqrt(2. * math.pi) - x * special.ndtr(-x / sigma)
  return _out(val)


def _require_localtime(p: ProcessParams) -> None:
  if not p.flags.localtime_regime:
    raise DomainError(f"local time needs -1 < a+b < 3, got a+b = {p.a + p.b}")


def expected_weighted_local_time(p: ProcessParams, t: float, x: ArrayLike, tol: float = ROUNDOFF) -> ArrayLike:
  """E[L^{a,b}(x, t)] = (1+a+b) int_0^t phi(x; s^{1+a+b}) s^{a+b} ds"""
  _require_localtime(p)
  top = float(_normal_scale(p, t))

  # with w = s^{(1+a+b)/2} the integrand is sqrt(2/pi) exp(-x^2 / 2w^2), bounded on [0, top]
  def one(level: float) -> float:
    if level == 0.:
      return SQRT_2_OVER_PI * top
    val, err = integrate.quad(lambda w: math.exp(-level * level / (2. * w * w)) if w > 0. else 0., 0., top,
                              epsabs=0., epsrel=tol, limit=200)
    LOGGER.debug("expected_weighted_local_time x=%g err=%g", level, err)
    return SQRT_2_OVER_PI * val

  return _out(np.vectorize(one, otypes=[float])(np.asarray(x, dtype=float)))


def expected_box_local_time(p: ProcessParams, t: float, x: ArrayLike, h: float, tol: float = ROUNDOFF) -> ArrayLike:
  """Expectation of the box-kernel local time estimator with half-width h"""
  _require_localtime(p)
  if not h > 0.:
    raise DomainError("bandwidth must be > 0")
  top = float(_normal_scale(p, t))

  def integrand(w: float, level: float) -> float:
    if w == 0.:
      return 0.
    mass = special.ndtr((level + h) / w) - special.ndtr((level - h) / w)
    return w * mass / h

  def one(level: float) -> float:
    val, _ = integrate.quad(integrand, 0., top, args=(level,), epsabs=0., epsrel=tol, limit=200,
                            points=[min(abs(level) + h, top) / 2.])
    return val

  return _out(np.vectorize(one, otypes=[float])(np.asarray(x, dtype=float)))


def bivariate_density(x: ArrayLike, y: ArrayLike, var_x: ArrayLike, var_y: ArrayLike, cov: ArrayLike) -> ArrayLike:
  """Density of a centered Gaussian pair, broadcast over points and over (var_x, var_y, cov)"""
  var_x, var_y, cov = (np.asarray(v, dtype=float) for v in (var_x, var_y, cov))
  rho2 = var_x * var_y - cov ** 2
  if not np.all(rho2 > 0.):
    raise DomainError("degenerate pair: var_x * var_y - cov^2 must be > 0")
  x = np.asarray(x, dtype=float)
  y = np.asarray(y, dtype=float)
  quad_form = (var_y * x ** 2 - 2. * cov * x * y + var_x * y ** 2) / (2. * rho2)
  return _out(np.exp(-quad_form) / (2. * math.pi * np.sqrt(rho2)))


def gaussian_pair_expectation(g: Callable[[np.ndarray, np.ndarray], np.ndarray], var_x: ArrayLike, var_y: ArrayLike,
                              cov: ArrayLike, order: int = 40) -> ArrayLike:
  """E g(X, Y) for a centered Gaussian pair, by a tensor Gauss-Hermite rule"""
  var_x, var_y, cov = np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in (var_x, var_y, cov)])
  nodes, weights = hermegauss(order)
  weights = weights / math.sqrt(2. * math.pi)

  sx = np.sqrt(np.maximum(var_x, 0.))
  slope = np.divide(cov, sx, out=np.zeros_like(sx), where=sx > 0.)
  resid = np.sqrt(np.maximum(var_y - slope ** 2, 0.))

  z1 = nodes[:, None]
  z2 = nodes[None, :]
  xs = sx[..., None, None] * z1
  ys = slope[..., None, None] * z1 + resid[..., None, None] * z2
  vals = g(np.broadcast_to(xs, ys.shape), ys)
  return _out(np.einsum("...ij,i,j->...", vals, weights, weights))


def gaussian_expectation(g: Callable[[np.ndarray], np.ndarray], var: ArrayLike, support=None, order: int = 96) -> ArrayLike:
  """E g(X) for X ~ N(0, var), vectorized over var.

  Without a support this is a Gauss-Hermite rule. With support=(lo, hi), g is
  taken to vanish outside [lo, hi] (either end may be infinite) and the rule
  is Gauss-Legendre on the support clipped to 12 standard deviations.
  """
  var = np.asarray(var, dtype=float)
  if np.any(var < 0.):
    raise DomainError("variance must be >= 0")
  sigma = np.sqrt(var)[..., None]

  if support is None:
    nodes, weights = hermegauss(order)
    vals = g(sigma * nodes)
    return _out(vals @ (weights / math.sqrt(2. * math.pi)))

  lo, hi = float(support[0]), float(support[1])
  nodes, weights = np.polynomial.legendre.leggauss(order)
  left = np.maximum(lo, -12. * sigma)
  right = np.minimum(hi, 12. * sigma)
  half = np.maximum(right - left, 0.) / 2.
  xs = (left + right) / 2. + half * nodes
  with np.errstate(divide="ignore", invalid="ignore"):
    dens = np.exp(-xs ** 2 / (2. * sigma ** 2)) / (math.sqrt(2. * math.pi) * sigma)
    val = np.sum(np.where(half > 0., g(xs) * dens, 0.) * weights, axis=-1) * half[..., 0]
  # point mass at the origin when var = 0
  at_zero = float(g(np.zeros(1))[0]) if lo <= 0. <= hi else 0.
  val = np.where(sigma[..., 0] > 0., val, at_zero)
  return _out(val)
