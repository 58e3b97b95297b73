"""Ratio scans of the increment-variance, determinant and covariance estimates.

Each scan evaluates the left side of an estimate through the kernel, divides
by the comparison expression and reports the empirical constants. A scan is
evidence for an estimate on the scanned region, nothing more.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from wfbm import schema
from wfbm.errors import DomainError, GridError
from wfbm.families import BUMPS, get_family
from wfbm.kernel import (ProcessParams, bivariate_density, covariance, increment_excess, increment_excess_bound,
                         increment_variance, rho_squared)
from wfbm.output import fmt, open_csv

LOGGER = logging.getLogger(__name__)

TWO_SIDED = ("L3_1", "L3_2")
LEMMA_3_4 = ("L3_4a", "L3_4b", "L3_4c", "L3_4d", "L3_4e")
ONE_SIDED = ("L3_1b", "L3_3") + LEMMA_3_4 + ("L3_5", "H6_6")
LEMMAS = TWO_SIDED + ONE_SIDED
POINT_COLUMNS = 5


@dataclass(frozen=True)
class ScanGrid:
  lo: float = .05
  hi: float = 2.
  points: int = 50
  log: bool = True
  min_gap: float = .02
  tuple_points: int = 16

  def __post_init__(self):
    if not (0. < self.lo < self.hi) or self.points < 2 or self.tuple_points < 4 or self.min_gap < 0.:
      raise GridError(f"degenerate scan grid {self}")

  def axis(self, points: Optional[int] = None) -> np.ndarray:
    n = points or self.points
    return np.geomspace(self.lo, self.hi, n) if self.log else np.linspace(self.lo, self.hi, n)

  def refined(self) -> "ScanGrid":
    """Same region, half the spacing"""
    return ScanGrid(self.lo, self.hi, 2 * self.points - 1, self.log, self.min_gap, 2 * self.tuple_points - 1)

  def describe(self, k: int) -> str:
    spacing = "log" if self.log else "linear"
    n = self.points if k == 2 else self.tuple_points
    return f"({self.lo}, {self.hi}]^{k} {spacing} {n} points per axis, gaps >= {self.min_gap}"

  def pairs(self) -> np.ndarray:
    """(t, s) with t > s and t - s >= min_gap"""
    return self.tuples(2, self.points)

  def tuples(self, k: int, points: Optional[int] = None) -> np.ndarray:
    """Strictly decreasing k-tuples with consecutive gaps >= min_gap"""
    ax = self.axis(points or self.tuple_points)[::-1]
    out = np.array(list(itertools.combinations(ax, k)))
    keep = np.all(-np.diff(out, axis=1) >= self.min_gap, axis=1)
    if not np.any(keep):
      raise GridError(f"scan grid has no {k}-tuples with gaps >= {self.min_gap}")
    return out[keep]


@dataclass
class ScanReport:
  lemma_id: str
  region: str
  min_ratio: float
  max_ratio: float
  constant: float
  violations: int
  n_points: int
  point_names: tuple[str, ...] = ()
  rows: list = field(default_factory=list, repr=False)
  notes: str = ""

  def to_message(self, p: ProcessParams):
    msg = schema.ScanReport.new_message()
    msg.lemma = self.lemma_id
    msg.params.a = p.a
    msg.params.b = p.b
    msg.region = self.region
    msg.minRatio = self.min_ratio
    msg.maxRatio = self.max_ratio
    msg.constant = self.constant
    msg.violations = self.violations
    msg.nPoints = self.n_points
    msg.notes = self.notes
    return msg


def _report(lemma: str, region: str, points: np.ndarray, names: tuple[str, ...], lhs: np.ndarray, rhs: np.ndarray,
            constant: Optional[float] = None, two_sided: bool = False, notes: str = "") -> ScanReport:
  lhs = np.asarray(lhs, dtype=float)
  rhs = np.asarray(rhs, dtype=float)
  if np.any(~(rhs > 0.)) or np.any(~np.isfinite(rhs)):
    raise DomainError(f"{lemma}: comparison expression is not positive and finite on the scan")
  ratio = (lhs if two_sided else np.abs(lhs)) / rhs
  if not np.all(np.isfinite(ratio)):
    raise DomainError(f"{lemma}: non-finite ratio on the scan")
  hi = float(ratio.max())
  const = hi if constant is None else float(constant)
  violations = 0 if two_sided else int(np.sum(ratio > const * (1. + 1e-12)))
  rows = [tuple(pt) + (l, r, q) for pt, l, r, q in zip(points.tolist(), lhs.tolist(), rhs.tolist(), ratio.tolist())]
  LOGGER.info("%s: %d points, ratio in [%g, %g]", lemma, len(rows), float(ratio.min()), hi)
  return ScanReport(lemma, region, float(ratio.min()), hi, const, violations, len(rows), names, rows, notes)


def scan_two_sided(p: ProcessParams, lemma: str, grid: ScanGrid = ScanGrid()) -> ScanReport:
  if lemma not in TWO_SIDED:
    raise DomainError(f"{lemma!r} is not a two-sided estimate, expected one of {TWO_SIDED}")
  pts = grid.pairs()
  t, s = pts[:, 0], pts[:, 1]
  if lemma == "L3_1":
    lhs = increment_variance(p, t, s)
    rhs = t ** p.a * (t - s) ** (1. + p.b)
  else:
    lhs = rho_squared(p, t, s)
    rhs = (t * s) ** p.a * s ** (1. + p.b) * (t - s) ** (1. + p.b)
  return _report(lemma, grid.describe(2), pts, ("t", "s"), lhs, rhs, two_sided=True)


def _increment_variance_corollary(p: ProcessParams, grid: ScanGrid, constant) -> ScanReport:
  if p.a > 0.:
    raise DomainError("L3_1b holds for a <= 0 only")
  pts = grid.pairs()
  t, s = pts[:, 0], pts[:, 1]
  lhs = increment_variance(p, t, s)
  return _report("L3_1b", grid.describe(2), pts, ("t", "s"), lhs, (t - s) ** p.order, constant)


def _cross_increment(p: ProcessParams, grid: ScanGrid, alpha: float, constant, tuples=None) -> ScanReport:
  pts = grid.tuples(4) if tuples is None else tuples
  t, s, t2, s2 = pts.T
  a, b = p.a, p.b
  lhs = covariance(p, t, t2) - covariance(p, t, s2) - covariance(p, s, t2) + covariance(p, s, s2)
  common = (np.maximum(s2 ** a, s ** a) ** alpha * (t * t2) ** (.5 * a * (1. - alpha))
            * ((t - s) * (t2 - s2)) ** (alpha + .5 * (1. - alpha) * (1. + b)))
  stated = common / (t - t2) ** ((1. - b) * alpha)
  alternate = common / (t - t2) ** ((1. + b) * alpha)
  alt_max = float(np.max(np.abs(lhs) / alternate))
  stated_max = float(np.max(np.abs(lhs) / stated))
  binding = "(1-b)alpha" if stated_max >= alt_max else "(1+b)alpha"
  notes = (f"alpha={alpha}; max ratio with (t-t')^((1-b)alpha) = {stated_max!r}, "
           f"with (t-t')^((1+b)alpha) = {alt_max!r}; binding: {binding}")
  return _report("L3_3", grid.describe(4), pts, ("t", "s", "t2", "s2"), lhs, stated, constant, notes=notes)


def _covariance_estimate(p: ProcessParams, lemma: str, grid: ScanGrid, constant, tuples=None) -> ScanReport:
  pts = grid.tuples(3) if tuples is None else tuples
  t, s, r = pts.T
  a, e = p.a, 1. + p.b
  if lemma == "L3_4a":
    lhs, rhs = covariance(p, t, s) - covariance(p, t, r), (s - r) ** e * s ** a
  elif lemma == "L3_4b":
    lhs, rhs = covariance(p, s, t) - s ** p.order, (t - s) ** e * s ** a
  elif lemma == "L3_4c":
    lhs, rhs = s ** p.order - covariance(p, s, r), (s - r) ** e * s ** a
  elif lemma == "L3_4d":
    lhs, rhs = covariance(p, s, t) - covariance(p, s, r), (t - r) ** e * s ** a
  else:
    lhs, rhs = covariance(p, r, t) - covariance(p, r, s), (t - s) ** e * r ** a
  notes = "" if p.flags.qcov_regime else "b >= 0 lies outside the stated hypothesis -1 < b < 0"
  return _report(lemma, grid.describe(3), pts, ("t", "s", "r"), lhs, rhs, constant, notes=notes)


def _density_estimate(p: ProcessParams, grid: ScanGrid, constant, order: int = 64, chunk: int = 64) -> ScanReport:
  pts = grid.pairs()
  s, r = pts[:, 0], pts[:, 1]
  var_s, var_r, mu = s ** p.order, r ** p.order, covariance(p, s, r)
  rho2 = rho_squared(p, s, r)
  nodes, weights = np.polynomial.legendre.leggauss(order)
  n = len(pts)
  # rows per bump: (s, r, bump, estimate) with estimates 1 and 2 interleaved
  pair_rows = np.repeat(pts, 2, axis=0)
  est_col = np.tile([1., 2.], n)
  rows_pts, lhs_all, rhs_all, notes = [], [], [], []
  for k, name in enumerate(BUMPS):
    f = get_family(name)
    lo, hi = f.support
    half = (hi - lo) / 2.
    x = (lo + hi) / 2. + half * nodes
    w2 = np.outer(weights, weights) * half ** 2
    X, Y = np.meshgrid(x, x, indexing="ij")
    fp_fp = w2 * f.fprime(X) * f.fprime(Y)
    fpp_f = w2 * f.fsecond(X) * f.f(Y)
    first, second = np.empty(n), np.empty(n)
    for start in range(0, n, chunk):
      sl = slice(start, start + chunk)
      dens = bivariate_density(X, Y, var_s[sl, None, None], var_r[sl, None, None], mu[sl, None, None])
      first[sl] = np.sum(fp_fp * dens, axis=(1, 2))
      second[sl] = np.sum(fpp_f * dens, axis=(1, 2))
    energy = np.asarray(f.mean_square(var_s)) + np.asarray(f.mean_square(var_r))
    bound1 = ((r * s) ** (.5 * p.order) / rho2 + mu / rho2) * energy
    bound2 = var_r / rho2 * energy
    lhs = np.column_stack((first, second)).ravel()
    rhs = np.column_stack((bound1, bound2)).ravel()
    rows_pts.append(np.column_stack((pair_rows, np.full(2 * n, float(k)), est_col)))
    lhs_all.append(lhs)
    rhs_all.append(rhs)
    ratio = np.abs(lhs) / rhs
    notes += [f"{name} estimate 1: max {float(ratio[0::2].max())!r}", f"{name} estimate 2: max {float(ratio[1::2].max())!r}"]
  notes_text = "evidence over five C2 bumps, not a proof; " + "; ".join(notes)
  return _report("L3_5", grid.describe(2), np.vstack(rows_pts), ("s", "r", "bump", "estimate"),
                 np.concatenate(lhs_all), np.concatenate(rhs_all), constant, notes=notes_text)


def _excess_estimate(p: ProcessParams, grid: ScanGrid, constant) -> ScanReport:
  s_axis = grid.axis()
  eps_axis = np.geomspace(1e-3, .5, grid.points)
  S, E = np.meshgrid(s_axis, eps_axis, indexing="ij")
  pts = np.column_stack((S.ravel(), E.ravel()))
  lhs = increment_excess(p, pts[:, 0], pts[:, 1])
  rhs = increment_excess_bound(p, pts[:, 0], pts[:, 1])
  case = "a > 1" if p.a > 1. else ("0 <= a <= 1" if p.a >= 0. else "-1 < a < 0, nu = (1+a)/2")
  region = f"s in ({grid.lo}, {grid.hi}], eps in [0.001, 0.5], {grid.points} log points each"
  return _report("H6_6", region, pts, ("s", "eps"), lhs, rhs, constant, notes=f"bound case {case}")


def scan_one_sided(p: ProcessParams, lemma: str, grid: ScanGrid = ScanGrid(), alpha: float = .5,
                   constant: Optional[float] = None, tuples=None) -> ScanReport:
  """Empirical constant max |lhs| / rhs of a one-sided estimate.

  tuples optionally replaces the generated points; they must be strictly
  decreasing (t > s > t' > s' for L3_3, t > s > r for L3_4*).
  """
  if lemma not in ONE_SIDED:
    raise DomainError(f"{lemma!r} is not a one-sided estimate, expected one of {ONE_SIDED}")
  if tuples is not None:
    tuples = np.atleast_2d(np.asarray(tuples, dtype=float))
    if np.any(np.diff(tuples, axis=1) >= 0.) or np.any(tuples <= 0.):
      raise DomainError(f"{lemma}: points must be strictly decreasing and positive")
  if lemma == "L3_1b":
    return _increment_variance_corollary(p, grid, constant)
  if lemma == "L3_3":
    if not 0. <= alpha <= 1.:
      raise DomainError("alpha must lie in [0, 1]")
    return _cross_increment(p, grid, alpha, constant, tuples)
  if lemma in LEMMA_3_4:
    return _covariance_estimate(p, lemma, grid, constant, tuples)
  if lemma == "L3_5":
    return _density_estimate(p, grid, constant)
  return _excess_estimate(p, grid, constant)


def scan(p: ProcessParams, lemma: str, grid: ScanGrid = ScanGrid(), alpha: float = .5) -> list[ScanReport]:
  """Dispatch on a lemma id; 'L3_4' expands to its five estimates and 'all' to every scan that applies"""
  if lemma == "all":
    names = [n for n in LEMMAS if not (n == "L3_1b" and p.a > 0.)]
  elif lemma == "L3_4":
    names = list(LEMMA_3_4)
  elif lemma in LEMMAS:
    names = [lemma]
  else:
    raise DomainError(f"unknown lemma {lemma!r}, expected one of {LEMMAS + ('L3_4', 'all')}")
  return [scan_two_sided(p, n, grid) if n in TWO_SIDED else scan_one_sided(p, n, grid, alpha) for n in names]


def write_scan_csv(reports: list[ScanReport], path: str, header: Optional[str] = None) -> None:
  columns = ["lemma"] + [f"x{i + 1}" for i in range(POINT_COLUMNS)] + ["lhs", "rhs", "ratio"]
  with open_csv(path, columns, header) as w:
    for rep in reports:
      for row in rep.rows:
        pt, vals = row[:-3], row[-3:]
        cells = [fmt(float(v)) for v in pt] + [""] * (POINT_COLUMNS - len(pt))
        w.writerow([rep.lemma_id] + cells + [fmt(float(v)) for v in vals])
    for rep in reports:
      w.writerow([f"# summary lemma={rep.lemma_id} points={','.join(rep.point_names)} min={rep.min_ratio!r} "
                  f"max={rep.max_ratio!r} constant={rep.constant!r} violations={rep.violations} n={rep.n_points}"])


def envelope(report: ScanReport) -> float:
  """max / min ratio of a two-sided scan"""
  return report.max_ratio / report.min_ratio if report.min_ratio > 0. else math.inf
