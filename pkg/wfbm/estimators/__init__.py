"""Pathwise discretized estimators over a PathEnsemble.

Every estimator works on the whole ensemble at once and returns per-path
values: shape (N,) for a scalar t, (N, len(t)) for an array of times.
"""
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, special
from numpy.polynomial.hermite_e import hermegauss

from wfbm.errors import DomainError, EdgeMassError, GridError, NormInfinite
from wfbm.families import FunctionSpec
from wfbm.kernel import ProcessParams, covariance, gaussian_expectation
from wfbm.output import fmt, open_csv
from wfbm.sampler import PathEnsemble, SimGrid

LOGGER = logging.getLogger(__name__)

QUAD_RULES = ("left", "trapezoid")
EDGE_FRACTION = 1e-6

Times = Union[float, Sequence[float], np.ndarray]


def _fn(f) -> Callable[[np.ndarray], np.ndarray]:
  return f.f if isinstance(f, FunctionSpec) else f


def _check_rule(quad_rule: str) -> None:
  if quad_rule not in QUAD_RULES:
    raise DomainError(f"quad_rule must be one of {QUAD_RULES}, got {quad_rule!r}")


def _steps(grid: SimGrid, t: Times) -> tuple[np.ndarray, bool]:
  """Number of grid steps up to each t; t must be grid times"""
  ts = np.atleast_1d(np.asarray(t, dtype=float))
  n = np.rint(ts / grid.step).astype(int)
  if np.any(n < 1) or np.any(np.abs(n * grid.step - ts) > 1e-9 * grid.step):
    raise GridError(f"t={t} must be positive multiples of the grid step {grid.step}")
  if np.any(n > len(grid)):
    raise GridError(f"t={t} beyond the grid horizon {grid.horizon}")
  return n, np.ndim(t) == 0


def _lookahead(grid: SimGrid, eps: float) -> int:
  k = int(round(eps / grid.step))
  if abs(k * grid.step - eps) > 1e-9 * grid.step:
    raise GridError(f"eps={eps} is not a multiple of the grid step {grid.step}")
  if k < 2:
    raise GridError(f"eps={eps} is below two grid steps")
  return k


def _node_weights(cell_weights: np.ndarray, counts: np.ndarray, quad_rule: str) -> np.ndarray:
  """(cells + 1, T) matrix mapping node values to the integral over the first counts[k] cells"""
  _check_rule(quad_rule)
  cells = np.arange(cell_weights.size)
  active = cells[:, None] < counts[None, :]
  w = np.zeros((cell_weights.size + 1, counts.size))
  if quad_rule == "left":
    w[:-1] = cell_weights[:, None] * active
  else:
    half = .5 * cell_weights[:, None] * active
    w[:-1] += half
    w[1:] += half
  return w


def _squeeze(out: np.ndarray, scalar: bool) -> np.ndarray:
  return out[..., 0] if scalar else out


@dataclass(frozen=True)
class EstimatorConfig:
  epsilon: float
  t_eval: tuple[float, ...]
  bandwidth: float
  x_grid: np.ndarray
  quad_rule: str = "left"

  def __post_init__(self):
    _check_rule(self.quad_rule)
    if not self.bandwidth > 0.:
      raise DomainError("bandwidth must be > 0")
    x = np.array(self.x_grid, dtype=float)
    if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0.):
      raise DomainError("x_grid must be strictly increasing with at least 3 points")
    dx = np.diff(x)
    if np.max(np.abs(dx - dx[0])) > 1e-9 * dx[0]:
      raise DomainError("x_grid must be uniform")
    x.setflags(write=False)
    object.__setattr__(self, "x_grid", x)
    object.__setattr__(self, "t_eval", tuple(float(v) for v in self.t_eval))

  @property
  def x_step(self) -> float:
    return float(self.x_grid[1] - self.x_grid[0])

  def check(self, grid: SimGrid) -> None:
    if self.epsilon < 2. * grid.step * (1. - 1e-9):
      raise GridError(f"epsilon {self.epsilon} is below two grid steps")
    _steps(grid, self.t_eval)

  @classmethod
  def default(cls, p: ProcessParams, grid: SimGrid, epsilon: Optional[float] = None, t_eval: Sequence[float] = (),
              bandwidth: float = 0., x_half_width: float = 0., x_step: float = 0., quad_rule: str = "left") -> "EstimatorConfig":
    if epsilon is None:
      epsilon = 8. * grid.step
    if not t_eval:
      t_eval = tuple(k * grid.step * round(grid.horizon / grid.step / 5.) for k in range(1, 6))
    h = bandwidth if bandwidth > 0. else 2. * math.sqrt(grid.step ** (1. + p.b) * grid.horizon ** p.a)
    dx = x_step if x_step > 0. else h / 4.
    half = x_half_width if x_half_width > 0. else 7. * math.sqrt(grid.horizon ** p.order) + h
    k = int(math.ceil(half / dx))
    return cls(epsilon, tuple(t_eval), h, dx * np.arange(-k, k + 1), quad_rule)


# *** time integrals ***

def weighted_time_integral(p: ProcessParams, ensemble: PathEnsemble, g, t: Times, quad_rule: str = "left") -> np.ndarray:
  """(1+a+b) int_0^t g(B_s) s^{a+b} ds with exact cell weights"""
  n, scalar = _steps(ensemble.grid, t)
  times, values = ensemble.with_origin()
  top = int(n.max())
  cells = np.diff(times[:top + 1] ** p.order)
  w = _node_weights(cells, n, quad_rule)
  out = _fn(g)(values[:, :top + 1]) @ w
  return _squeeze(out, scalar)


def _qcov_nodes(ensemble: PathEnsemble, t: Times, eps: float, quad_rule: str):
  grid = ensemble.grid
  n, scalar = _steps(grid, t)
  k = _lookahead(grid, eps)
  top = int(n.max())
  if top + 2 * k > len(grid):
    raise GridError(f"grid horizon {grid.horizon} is shorter than t + 2 eps = {top * grid.step + 2 * eps}")
  times, values = ensemble.with_origin()
  # nodes j = k .. k + top, lookahead j + k
  here = values[:, k:k + top + 1]
  ahead = values[:, 2 * k:2 * k + top + 1]
  s = times[k:k + top + 1]
  b = ensemble.params.b
  cells = np.diff(s ** (1. + b)) / (1. + b)
  return here, ahead, _node_weights(cells, n, quad_rule), scalar


def _qcov_scale(p: ProcessParams, eps: float) -> float:
  return p.order / eps ** (1. + p.b)


def qcov_estimate(p: ProcessParams, ensemble: PathEnsemble, f, t: Times, eps: float, quad_rule: str = "left") -> np.ndarray:
  """Discretized J_eps(f, t) per path"""
  here, ahead, w, scalar = _qcov_nodes(ensemble, t, eps, quad_rule)
  f = _fn(f)
  integrand = (f(ahead) - f(here)) * (ahead - here)
  return _squeeze(_qcov_scale(p, eps) * (integrand @ w), scalar)


def qcov_parts(p: ProcessParams, ensemble: PathEnsemble, f, t: Times, eps: float,
               quad_rule: str = "left") -> tuple[np.ndarray, np.ndarray]:
  """One-sided integrals (forward, backward) with J_eps = forward - backward"""
  here, ahead, w, scalar = _qcov_nodes(ensemble, t, eps, quad_rule)
  f = _fn(f)
  incr = ahead - here
  scale = _qcov_scale(p, eps)
  forward = scale * ((f(ahead) * incr) @ w)
  backward = scale * ((f(here) * incr) @ w)
  return _squeeze(forward, scalar), _squeeze(backward, scalar)


def _identity(x: np.ndarray) -> np.ndarray:
  return x


def qvar_estimate(p: ProcessParams, ensemble: PathEnsemble, t: Times, eps: float, quad_rule: str = "left") -> np.ndarray:
  """X_eps(t), the squared-increment functional"""
  return qcov_estimate(p, ensemble, _identity, t, eps, quad_rule)


def expected_qcov(p: ProcessParams, grid: SimGrid, fspec: FunctionSpec, t: Times, eps: float, quad_rule: str = "left"):
  """Exact expectation of the discretized J_eps(f, t) on this grid.

  By Gaussian integration by parts, E[(f(Y) - f(X))(Y - X)] =
  (Var Y - Cov) E f'(Y) + (Var X - Cov) E f'(X).
  """
  n, scalar = _steps(grid, t)
  k = _lookahead(grid, eps)
  top = int(n.max())
  if top + 2 * k > len(grid):
    raise GridError("grid horizon is shorter than t + 2 eps")
  times = np.concatenate(([0.], grid.times))
  s = times[k:k + top + 1]
  sa = times[2 * k:2 * k + top + 1]
  var_x, var_y = s ** p.order, sa ** p.order
  cov = covariance(p, sa, s)
  pair = (var_y - cov) * fspec.mean_derivative(var_y) + (var_x - cov) * fspec.mean_derivative(var_x)
  cells = np.diff(s ** (1. + p.b)) / (1. + p.b)
  out = _qcov_scale(p, eps) * (pair @ _node_weights(cells, n, quad_rule))
  return float(out[0]) if scalar else out


def richardson(fine, coarse, ratio: float, order: float):
  """Removes a bias term c * eps^order from two estimates at eps and ratio * eps"""
  r = ratio ** order
  return (r * np.asarray(fine) - np.asarray(coarse)) / (r - 1.)


# *** local time ***

def _t_index(t_eval: Sequence[float], t: float) -> int:
  for i, te in enumerate(t_eval):
    if abs(te - t) <= 1e-9 * max(1., abs(t)):
      return i
  raise DomainError(f"t={t} is not one of the evaluation times {tuple(t_eval)}")


@dataclass(frozen=True)
class LocalTimeField:
  x_grid: np.ndarray
  t_eval: tuple[float, ...]
  # ensemble means, (len(x_grid), len(t_eval))
  raw: np.ndarray
  weighted: np.ndarray
  bandwidth: float
  n_paths_averaged: int
  # per-path weighted field, (N, len(x_grid), len(t_eval))
  samples: np.ndarray

  @property
  def x_step(self) -> float:
    return float(self.x_grid[1] - self.x_grid[0])

  def t_index(self, t: float) -> int:
    return _t_index(self.t_eval, t)

  def mass(self, t: float, weighted: bool = True) -> float:
    field = self.weighted if weighted else self.raw
    return float(np.sum(field[:, self.t_index(t)]) * self.x_step)

  def at(self, x: float, t: float) -> np.ndarray:
    """Per-path weighted local time at level x, linear in x between lattice points"""
    xs = self.x_grid
    if not xs[0] <= x <= xs[-1]:
      return np.zeros(self.n_paths_averaged)
    pos = (x - xs[0]) / self.x_step
    i = min(int(pos), xs.size - 2)
    frac = pos - i
    col = self.samples[:, :, self.t_index(t)]
    return (1. - frac) * col[:, i] + frac * col[:, i + 1]

  def two_point(self, lo: float, hi: float, t: float) -> np.ndarray:
    return self.at(lo, t) - self.at(hi, t)


def _box_overlap(x: float, dx: float, h: float, b: np.ndarray) -> np.ndarray:
  # |[x - dx/2, x + dx/2] & [b - h, b + h]| / (2h dx)
  lo = np.maximum(x - dx / 2., b - h)
  hi = np.minimum(x + dx / 2., b + h)
  return np.maximum(hi - lo, 0.) / (2. * h * dx)


def local_time_field(p: ProcessParams, ensemble: PathEnsemble, cfg: EstimatorConfig) -> LocalTimeField:
  if not p.flags.localtime_regime:
    raise DomainError(f"local time needs -1 < a+b < 3, got a+b = {p.a + p.b}")
  grid = ensemble.grid
  cfg.check(grid)
  n, _ = _steps(grid, cfg.t_eval)
  top = int(n.max())
  times, values = ensemble.with_origin()
  values = values[:, :top + 1]
  w_raw = _node_weights(np.diff(times[:top + 1]), n, cfg.quad_rule)
  w_wt = _node_weights(np.diff(times[:top + 1] ** p.order), n, cfg.quad_rule)

  h, dx, xs = cfg.bandwidth, cfg.x_step, cfg.x_grid
  lo, hi = values.min() - h - dx, values.max() + h + dx
  samples = np.zeros((ensemble.n_paths, xs.size, len(n)))
  raw = np.zeros((xs.size, len(n)))
  for i, x in enumerate(xs):
    if not lo <= x <= hi:
      continue
    kern = _box_overlap(x, dx, h, values)
    samples[:, i, :] = kern @ w_wt
    raw[i] = np.mean(kern @ w_raw, axis=0)

  samples.setflags(write=False)
  LOGGER.debug("local time field: %d levels, h=%g, %d paths", xs.size, h, ensemble.n_paths)
  return LocalTimeField(xs, tuple(cfg.t_eval), raw, samples.mean(axis=0), h, ensemble.n_paths, samples)


def _psi(z: np.ndarray) -> np.ndarray:
  # antiderivative of the normal cdf
  return z * special.ndtr(z) + np.exp(-z * z / 2.) / math.sqrt(2. * math.pi)


def expected_local_time_field(p: ProcessParams, grid: SimGrid, cfg: EstimatorConfig, weighted: bool = True) -> np.ndarray:
  """Exact expectation of the local time field estimator on this grid, (len(x_grid), len(t_eval))"""
  n, _ = _steps(grid, cfg.t_eval)
  top = int(n.max())
  times = np.concatenate(([0.], grid.times[:top]))
  cells = np.diff(times ** (p.order if weighted else 1.))
  w = _node_weights(cells, n, cfg.quad_rule)

  h, dx = cfg.bandwidth, cfg.x_step
  x = cfg.x_grid[:, None]
  sigma = np.sqrt(times[None, 1:] ** p.order)
  edges = (x + dx / 2. + h, x - dx / 2. + h, x + dx / 2. - h, x - dx / 2. - h)
  psi = [_psi(e / sigma) for e in edges]
  mean_kern = sigma * (psi[0] - psi[1] - psi[2] + psi[3]) / (2. * h * dx)
  # B_0 = 0 exactly
  at_origin = _box_overlap(0., dx, h, -cfg.x_grid)[:, None]
  return np.hstack((at_origin, mean_kern)) @ w


def stieltjes_against_local_time(f, field: LocalTimeField, t: float, per_path: bool = False):
  """int f(x) L(dx, t) by summation by parts: -sum f'(x) L(x, t) dx"""
  k = field.t_index(t)
  col = field.samples[:, :, k]
  peak = float(col.max())
  edge = float(max(col[:, 0].max(), col[:, -1].max()))
  if edge > EDGE_FRACTION * peak:
    raise EdgeMassError(f"local time at the x-grid edge is {edge:g} (peak {peak:g}); widen the x grid")
  dx = field.x_step
  fprime = np.gradient(_fn(f)(field.x_grid), dx)
  vals = -(col @ fprime) * dx
  return vals if per_path else float(np.mean(vals))


def _stieltjes_weights(f, x_grid: np.ndarray) -> np.ndarray:
  dx = float(x_grid[1] - x_grid[0])
  return -np.gradient(_fn(f)(x_grid), dx) * dx


def expected_stieltjes(f, p: ProcessParams, grid: SimGrid, cfg: EstimatorConfig, t: float) -> float:
  """Exact expectation of stieltjes_against_local_time on this grid"""
  field = expected_local_time_field(p, grid, cfg)
  k = _t_index(cfg.t_eval, t)
  return float(_stieltjes_weights(f, cfg.x_grid) @ field[:, k])


# *** H-norm ***

def _inner_mean_square(f, sigma: float, support) -> float:
  g = _fn(f)
  square = lambda x: g(x) ** 2  # noqa: E731
  if support is not None:
    return float(gaussian_expectation(square, sigma ** 2, support=support, order=128))
  vals = []
  for order in (64, 128):
    nodes, weights = hermegauss(order)
    vals.append(float(square(sigma * nodes) @ weights) / math.sqrt(2. * math.pi))
  lo, hi = vals
  if not (math.isfinite(lo) and math.isfinite(hi)) or abs(hi - lo) > 1e-6 * max(abs(hi), 1e-300):
    raise NormInfinite(f"Gaussian moment of f^2 does not converge at scale {sigma:g} ({lo:g} vs {hi:g})")
  return hi


def h_norm(f, T: float, p: ProcessParams, support=None) -> float:
  """||f||_H over [0, T+1]

  With w = s^{(1+a+b)/2} the squared norm is (2/(1+a+b)) int_0^{(T+1)^{(1+a+b)/2}} w E f(wZ)^2 dw.
  """
  if not T >= 0.:
    raise DomainError("T must be >= 0")
  if support is None and isinstance(f, FunctionSpec):
    support = f.support
  top = (T + 1.) ** (p.order / 2.)

  with warnings.catch_warnings():
    warnings.simplefilter("error", integrate.IntegrationWarning)
    try:
      val, err = integrate.quad(lambda w: w * _inner_mean_square(f, w, support), 0., top, epsabs=0., epsrel=1e-11, limit=200)
    except integrate.IntegrationWarning as e:
      raise NormInfinite(f"H-norm integral did not converge: {e}") from None
  sq = 2. / p.order * val
  if not math.isfinite(sq) or sq < 0.:
    raise NormInfinite(f"H-norm squared is {sq}")
  LOGGER.debug("h_norm^2=%g (quad err %g)", sq, err)
  return math.sqrt(sq)


# *** export ***

def write_field_csv(field: LocalTimeField, path: str, header: Optional[str] = None) -> None:
  with open_csv(path, ["x", "t", "raw", "weighted"], header) as w:
    for i, x in enumerate(field.x_grid):
      for k, t in enumerate(field.t_eval):
        w.writerow((fmt(float(x)), fmt(float(t)), fmt(float(field.raw[i, k])), fmt(float(field.weighted[i, k]))))


def write_estimates_csv(estimates: dict[float, np.ndarray], t_eval: Sequence[float], path: str, header: Optional[str] = None) -> None:
  """estimates maps epsilon to an (N, len(t_eval)) array"""
  with open_csv(path, ["path_id", "t", "epsilon", "estimate"], header) as w:
    for eps, vals in estimates.items():
      vals = np.asarray(vals).reshape(vals.shape[0], -1)
      for i, row in enumerate(vals):
        w.writerows((i, fmt(float(t)), fmt(float(eps)), fmt(float(v))) for t, v in zip(t_eval, row))
