"""Exact Gaussian simulation of B^{a,b} on a uniform grid by dense Cholesky."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from wfbm import __version__, schema
from wfbm.errors import DomainError, GridError, NotPositiveDefinite
from wfbm.kernel import ProcessParams, covariance
from wfbm.output import fmt, open_csv, read_metadata, write_metadata

LOGGER = logging.getLogger(__name__)

MAX_POINTS = 4096
CHUNK_PATHS = 64
GRAM_ROWS = 256

__all__ = ["SimGrid", "build_grid", "gram_matrix", "CholeskyFactor", "cholesky_with_jitter", "PathEnsemble",
           "sample_paths", "write_ensemble_csv", "ensemble_metadata", "write_metadata", "read_metadata"]


@dataclass(frozen=True)
class SimGrid:
  times: np.ndarray
  step: float
  horizon: float
  # build arguments; horizon above is the last grid time
  pad: float = 0.
  base_horizon: float = 0.

  def __post_init__(self):
    times = np.array(self.times, dtype=float)
    if times.ndim != 1 or times.size == 0:
      raise GridError("grid needs at least one time")
    if times[0] <= 0. or np.any(np.diff(times) <= 0.):
      raise GridError("grid times must be > 0 and strictly increasing")
    times.setflags(write=False)
    object.__setattr__(self, "times", times)
    object.__setattr__(self, "horizon", float(times[-1]))

  def __len__(self) -> int:
    return self.times.size

  def index(self, t: float) -> int:
    """Index of grid time t; t must sit on the grid"""
    k = int(round(t / self.step)) - 1
    if not 0 <= k < len(self) or abs(self.times[k] - t) > 1e-9 * self.step:
      raise GridError(f"t={t} is not a grid time")
    return k

  def scaled(self, c: float) -> "SimGrid":
    return SimGrid(self.times * c, self.step * c, self.horizon * c, self.pad * c, self.base_horizon * c)


def build_grid(horizon: float, step: float, pad: float = 0., max_points: int = MAX_POINTS) -> SimGrid:
  """Uniform grid on (0, horizon + pad] with spacing step"""
  if not (horizon > 0. and step > 0. and pad >= 0.):
    raise GridError(f"grid needs horizon > 0, step > 0, pad >= 0, got ({horizon}, {step}, {pad})")
  if step > horizon:
    raise GridError(f"step {step} exceeds horizon {horizon}")
  n = int(math.ceil((horizon + pad) / step - 1e-9))
  if n > max_points:
    raise GridError(f"{n} grid points exceed the cap of {max_points}")
  return SimGrid(step * np.arange(1, n + 1), step, step * n, pad, horizon)


def gram_matrix(p: ProcessParams, g: SimGrid, threads: int = 1) -> np.ndarray:
  times = g.times
  n = len(times)
  sigma = np.empty((n, n))

  def rows(start: int) -> None:
    stop = min(start + GRAM_ROWS, n)
    sigma[start:stop, start:] = covariance(p, times[start:stop, None], times[None, start:])

  with ThreadPoolExecutor(max_workers=threads) as ex:
    list(ex.map(rows, range(0, n, GRAM_ROWS)))

  # upper triangle is authoritative
  lower = np.tril_indices(n, -1)
  sigma[lower] = sigma.T[lower]
  return sigma


@dataclass(frozen=True)
class CholeskyFactor:
  lower: np.ndarray
  jitter: float


def cholesky_with_jitter(sigma: np.ndarray, jitter_start: float = 0., jitter_max: Optional[float] = None) -> CholeskyFactor:
  sigma = np.asarray(sigma, dtype=float)
  if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
    raise DomainError("cholesky_with_jitter needs a square matrix")
  scale = float(np.max(np.abs(sigma)))
  if np.max(np.abs(sigma - sigma.T)) > 1e-12 * scale:
    raise DomainError("cholesky_with_jitter needs a symmetric matrix")

  diag = float(np.max(np.diag(sigma)))
  if jitter_max is None:
    jitter_max = 1e-8 * diag
  eye = np.eye(sigma.shape[0])

  jitter = jitter_start
  while True:
    try:
      lower = scipy.linalg.cholesky(sigma + jitter * eye, lower=True)
      break
    except (scipy.linalg.LinAlgError, ValueError):
      jitter = max(jitter * 10., 1e-14 * diag)
      if jitter > jitter_max:
        raise NotPositiveDefinite(f"no factorization with jitter <= {jitter_max:g}") from None
      LOGGER.warning("cholesky failed, retrying with jitter %g", jitter)

  err = np.max(np.abs(lower @ lower.T - (sigma + jitter * eye)))
  if not err <= 1e-8 * scale:
    raise NotPositiveDefinite(f"factorization residual {err:g} too large")
  LOGGER.debug("cholesky n=%d jitter=%g residual=%g", sigma.shape[0], jitter, err)
  return CholeskyFactor(lower, jitter)


@dataclass(frozen=True)
class PathEnsemble:
  grid: SimGrid
  params: ProcessParams
  # path i at grid time j, read-only
  values: np.ndarray
  seed: int
  n_paths: int
  jitter: float = 0.

  def with_origin(self) -> tuple[np.ndarray, np.ndarray]:
    """Times and values with the B_0 = 0 column prepended"""
    times = np.concatenate(([0.], self.grid.times))
    values = np.hstack((np.zeros((self.n_paths, 1)), self.values))
    return times, values

  def column(self, t: float) -> np.ndarray:
    return self.values[:, self.grid.index(t)]


def _normals(seed: int, i: int, m: int) -> np.ndarray:
  return np.random.Generator(np.random.Philox(key=(seed << 64) | i)).standard_normal(m)


def sample_paths(p: ProcessParams, g: SimGrid, n: int, seed: int, threads: int = 1,
                 factor: Optional[CholeskyFactor] = None) -> PathEnsemble:
  if n < 1:
    raise DomainError("n must be >= 1")
  if not 0 <= seed < 2 ** 64:
    raise DomainError("seed must fit in 64 bits")
  if factor is None:
    factor = cholesky_with_jitter(gram_matrix(p, g, threads))
  m = len(g)
  lt = factor.lower.T

  # chunk shapes do not depend on the worker count
  def chunk(start: int) -> np.ndarray:
    stop = min(start + CHUNK_PATHS, n)
    z = np.stack([_normals(seed, i, m) for i in range(start, stop)])
    return z @ lt

  with ThreadPoolExecutor(max_workers=threads) as ex:
    values = np.vstack(list(ex.map(chunk, range(0, n, CHUNK_PATHS))))
  values.setflags(write=False)
  LOGGER.info("sampled %d paths on %d points (a=%g, b=%g, seed=%d)", n, m, p.a, p.b, seed)
  return PathEnsemble(g, p, values, seed, n, factor.jitter)


def write_ensemble_csv(ensemble: PathEnsemble, path: str, header: Optional[str] = None) -> None:
  times = ensemble.grid.times
  with open_csv(path, ["path_id", "t", "value"], header) as w:
    for i, row in enumerate(ensemble.values):
      w.writerows((i, fmt(float(t)), fmt(float(v))) for t, v in zip(times, row))


def ensemble_metadata(ensemble: PathEnsemble):
  g = ensemble.grid
  msg = schema.EnsembleMeta.new_message()
  msg.version = __version__
  msg.params.a = ensemble.params.a
  msg.params.b = ensemble.params.b
  msg.grid.horizon = g.base_horizon or g.horizon
  msg.grid.step = g.step
  msg.grid.pad = g.pad
  msg.nPoints = len(g)
  msg.nPaths = ensemble.n_paths
  msg.seed = ensemble.seed
  msg.jitter = ensemble.jitter
  msg.kappa = ensemble.params.kappa
  return msg
