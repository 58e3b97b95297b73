"""Monte Carlo harnesses for the bracket, chain rule, Ito, Bouleau-Yor and Tanaka identities.

Each harness samples one ensemble and evaluates a discretized estimator on it.
The finite-resolution expectation of every estimator is computed exactly from
the kernel. A report at finite resolution is judged on its z score against
that expectation; the analytic target is judged on an extrapolated or lemma
report. bias_budget, the gap between the two expectations, is informational
and never widens a verdict. Every report records the z_max and rel_max it was
judged with in extra.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from wfbm import schema
from wfbm.config import RunConfig, Tolerances
from wfbm.errors import DomainError
from wfbm.estimators import (EstimatorConfig, expected_local_time_field, expected_qcov, expected_stieltjes, h_norm,
                             local_time_field, qcov_estimate, qcov_parts, richardson, stieltjes_against_local_time,
                             weighted_time_integral)
from wfbm.families import BUMPS, FunctionSpec, get_family
from wfbm.kernel import (ProcessParams, cross_covariance, expected_abs_deviation, expected_positive_part, gaussian_expectation,
                         expected_weighted_local_time, increment_variance, validate_params)
from wfbm.output import fmt, open_csv
from wfbm.sampler import PathEnsemble, SimGrid, build_grid, sample_paths

LOGGER = logging.getLogger(__name__)

REPORT_COLUMNS = ["identity", "a", "b", "t", "epsilon", "n_paths", "mc_mean", "mc_stderr", "target", "z", "rel_err", "verdict"]
HNORM_FAMILY = ("constant",) + BUMPS + ("truncated_identity",)
# targets at or below this are zero and judged on z alone
ZERO_TARGET = 1e-12

Family = Union[str, FunctionSpec]


@dataclass(frozen=True)
class EstimateReport:
  identity_id: str
  a: float
  b: float
  t: float
  epsilon: float
  n_paths: int
  mc_mean: float
  mc_stderr: float
  target: float
  bias_budget: float
  z_score: float
  rel_err: float
  passed: bool
  extra: dict = field(default_factory=dict)

  def csv_row(self) -> list[str]:
    vals = (self.identity_id, self.a, self.b, self.t, self.epsilon, self.n_paths, self.mc_mean, self.mc_stderr, self.target,
            self.z_score, self.rel_err, "pass" if self.passed else "fail")
    return [fmt(v) for v in vals]

  def to_message(self):
    msg = schema.EstimateReport.new_message()
    msg.identity = self.identity_id
    msg.params.a = self.a
    msg.params.b = self.b
    msg.t = self.t
    msg.epsilon = self.epsilon
    msg.nPaths = self.n_paths
    msg.mcMean = self.mc_mean
    msg.mcStderr = self.mc_stderr
    msg.target = self.target
    msg.biasBudget = self.bias_budget
    msg.zScore = self.z_score
    msg.relErr = self.rel_err
    msg.passed = self.passed
    extra = msg.init("extra", len(self.extra))
    for entry, (k, v) in zip(extra, sorted(self.extra.items())):
      entry.key = k
      entry.value = float(v)
    return msg


def verdict(mc_mean: float, mc_stderr: float, target: float, z_max: float, rel_max: float) -> tuple[float, float, bool]:
  """(z, rel_err, passed) with passed iff |z| <= z_max and rel_err <= rel_max.

  For a target at roundoff level rel_err is the absolute gap and is not judged.
  """
  gap = mc_mean - target
  if mc_stderr > 0.:
    z = gap / mc_stderr
  else:
    z = 0. if abs(gap) <= ZERO_TARGET * max(1., abs(target)) else math.copysign(math.inf, gap)
  ok = abs(z) <= z_max
  if abs(target) > ZERO_TARGET:
    rel = abs(gap) / abs(target)
    ok = ok and rel <= rel_max
  else:
    rel = abs(gap)
  return z, rel, bool(ok and math.isfinite(mc_mean))


def _stats(samples: np.ndarray) -> tuple[float, float]:
  samples = np.asarray(samples, dtype=float)
  n = samples.size
  se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.
  return float(np.mean(samples)), se


def _judged(identity: str, p: ProcessParams, t: float, eps: float, n: int, mean: float, se: float, target: float,
            z_max: float, rel_max: float, budget: float = 0., extra: Optional[dict] = None, passed: bool = True) -> EstimateReport:
  z, rel, ok = verdict(mean, se, target, z_max, rel_max)
  extra = dict(extra or {}, z_max=z_max, rel_max=rel_max)
  rep = EstimateReport(identity, p.a, p.b, t, eps, n, mean, se, float(target), float(budget), z, rel, ok and passed, extra)
  LOGGER.info("%s eps=%g: mean=%.6g se=%.3g target=%.6g z=%.3g rel=%.3g -> %s", identity, eps, mean, se, target, z, rel,
              "pass" if rep.passed else "fail")
  return rep


def _make_report(identity: str, p: ProcessParams, t: float, eps: float, samples: np.ndarray, target: float, z_max: float,
                 rel_max: float, budget: float = 0., extra: Optional[dict] = None, passed: bool = True) -> EstimateReport:
  mean, se = _stats(samples)
  return _judged(identity, p, t, eps, int(np.size(samples)), mean, se, target, z_max, rel_max, budget, extra, passed)


def _monotone(values: Sequence[float], inversions: int = 1) -> bool:
  """Decreasing along the sequence with at most `inversions` increases"""
  ups = sum(1 for x, y in zip(values, values[1:]) if y > x)
  return ups <= inversions


# *** shared setup ***

@functools.lru_cache(maxsize=4)
def _sample(p: ProcessParams, horizon: float, step: float, pad: float, n: int, seed: int, threads: int) -> PathEnsemble:
  return sample_paths(p, build_grid(horizon, step, pad), n, seed, threads)


@dataclass(frozen=True)
class _Run:
  p: ProcessParams
  cfg: RunConfig
  ladder: tuple[float, ...]
  ensemble: PathEnsemble

  @property
  def grid(self) -> SimGrid:
    return self.ensemble.grid

  @property
  def tol(self) -> Tolerances:
    return self.cfg.tolerances

  @property
  def fine(self) -> float:
    return self.ladder[-1]

  def estimator_config(self, t: float, eps: Optional[float] = None, bandwidth: float = 0., x_step: float = 0.) -> EstimatorConfig:
    est = self.cfg.estimator
    t_eval = tuple(sorted(set(self.cfg.t_eval()) | {t}))
    if bandwidth > 0. and x_step <= 0.:
      x_step = bandwidth / 4.
    return EstimatorConfig.default(self.p, self.grid, eps or self.fine, t_eval,
                                   bandwidth or self.cfg.bandwidth(), est.x_half_width, x_step or est.x_step, est.quad_rule)


def _setup(p: ProcessParams, cfg: Optional[RunConfig], t: Optional[float], eps_ladder: Optional[Sequence[float]],
           n_paths: Optional[int], seed: Optional[int]) -> _Run:
  if cfg is None:
    cfg = RunConfig.from_ab(p.a, p.b)
  t = cfg.t if t is None else t
  ladder = tuple(sorted(eps_ladder or cfg.eps_ladder(), reverse=True))
  n = cfg.mc.n_paths if n_paths is None else n_paths
  seed = cfg.mc.seed if seed is None else seed
  pad = max(cfg.grid.pad, 2. * ladder[0])
  horizon = max(cfg.grid.horizon, t)
  ens = _sample(p, horizon, cfg.grid.step, pad, n, seed, cfg.mc.threads)
  return _Run(p, cfg, ladder, ens)


def _family(f: Family) -> FunctionSpec:
  return f if isinstance(f, FunctionSpec) else get_family(f)


def _require(p: ProcessParams, qcov: bool = False, localtime: bool = False) -> None:
  if qcov and not p.flags.qcov_regime:
    raise DomainError(f"needs -1 < b < 0, got b = {p.b}")
  if localtime and not p.flags.localtime_regime:
    raise DomainError(f"needs -1 < a+b < 3, got a+b = {p.a + p.b}")


def _abs_mean_derivative(fspec: FunctionSpec, var: float) -> float:
  if fspec.jump is not None:
    return abs(float(fspec.mean_derivative(var)))
  return float(gaussian_expectation(lambda x: np.abs(fspec.fprime(x)), var, support=fspec.support))


def chain_target(p: ProcessParams, fspec: FunctionSpec, t: float) -> float:
  """E[kappa int_0^t f'(B_s) ds^{1+a+b}] = kappa int_0^{t^{1+a+b}} E f'(sqrt(v) Z) dv

  Cancellation below 1e-9 of int E|f'| dv is returned as an exact 0.
  """
  top = t ** p.order
  scale, _ = integrate.quad(lambda v: _abs_mean_derivative(fspec, v), 0., top, epsabs=0., epsrel=1e-8, limit=200)
  if scale == 0.:
    return 0.
  val, _ = integrate.quad(lambda v: float(fspec.mean_derivative(v)), 0., top, epsabs=1e-12 * scale, epsrel=1e-10, limit=200)
  return 0. if abs(val) <= 1e-9 * scale else p.kappa * val


def bias_order(p: ProcessParams, fspec: FunctionSpec) -> float:
  """Leading power of eps in E J_eps(f) - E J_0(f): 1+a+b for smooth f, half that at a jump"""
  return p.order / 2. if fspec.jump is not None else p.order


def _extrapolated(identity: str, run: _Run, t: float, estimates: list, expectations: list, target: float,
                  order: float, extra: Optional[dict] = None, rhs: Optional[np.ndarray] = None) -> EstimateReport:
  """Richardson report over the two finest rungs (epsilon 0), judged against the analytic target"""
  ratio = run.ladder[-2] / run.ladder[-1]
  extrap = richardson(estimates[-1], estimates[-2], ratio, order)
  expected = float(richardson(expectations[-1], expectations[-2], ratio, order))
  extra = dict(extra or {}, expected=expected, ratio=ratio, order=order)
  if rhs is not None:
    extra["mean_abs_diff"] = float(np.mean(np.abs(extrap - rhs)))
  return _make_report(identity, run.p, t, 0., extrap, target, run.tol.z_max, run.tol.rel_max, abs(expected - target), extra)


# *** identities ***

def verify_chain_rule(p: ProcessParams, f_spec: Family = "cube", t: Optional[float] = None, eps_ladder=None,
                      n_paths: Optional[int] = None, seed: Optional[int] = None, cfg: Optional[RunConfig] = None,
                      identity: str = "chain", pathwise: bool = True) -> list[EstimateReport]:
  """J_eps(f, t) against kappa int_0^t f'(B_s) ds^{1+a+b}, path by path.

  One report per eps (coarse to fine), judged on z against the exact
  expectation of J_eps on this grid, then one Richardson-extrapolated report
  (epsilon 0) judged against the analytic target.
  The finest rung also carries a ladder criterion. With pathwise set: mean
  |D| decreasing along the ladder and, for a nonzero target, at most
  pathwise_rel_max |target| above |E J_eps - target|. Otherwise: the
  empirical L2 error against the target decreasing along the ladder.
  """
  fspec = _family(f_spec)
  if not fspec.differentiable:
    raise DomainError(f"{fspec.name} has no registered derivative")
  run = _setup(p, cfg, t, eps_ladder, n_paths, seed)
  t = run.cfg.t if t is None else t
  target = chain_target(p, fspec, t)
  quad_rule = run.cfg.estimator.quad_rule
  rhs = p.kappa * weighted_time_integral(p, run.ensemble, fspec.fprime, t, quad_rule)

  estimates, expectations = [], []
  mean_abs, l2 = [], []
  for eps in run.ladder:
    j = qcov_estimate(p, run.ensemble, fspec, t, eps, quad_rule)
    estimates.append(j)
    expectations.append(expected_qcov(p, run.grid, fspec, t, eps, quad_rule))
    mean_abs.append(float(np.mean(np.abs(j - rhs))))
    l2.append(float(np.mean((j - target) ** 2)))

  # E D = E J_eps - target, so mean |D| cannot fall below the bias
  bias = abs(expectations[-1] - target)
  pathwise_ok = _monotone(mean_abs) and (abs(target) <= ZERO_TARGET
                                         or mean_abs[-1] <= run.tol.pathwise_rel_max * abs(target) + bias)
  l2_ok = _monotone(l2)

  out = []
  for i, (eps, j, expected) in enumerate(zip(run.ladder, estimates, expectations)):
    extra = {"mean_abs_diff": mean_abs[i], "l2_error": l2[i], "expected": expected, "analytic": target}
    last = i == len(run.ladder) - 1
    if last:
      extra.update(pathwise_ok=float(pathwise_ok), l2_monotone=float(l2_ok))
    ok = (pathwise_ok if pathwise else l2_ok) if last else True
    out.append(_make_report(identity, p, t, eps, j, expected, run.tol.z_max, math.inf, abs(expected - target), extra, ok))

  if len(run.ladder) >= 2:
    out.append(_extrapolated(identity, run, t, estimates, expectations, target, p.order, rhs=rhs))
  return out


def verify_qvar(p: ProcessParams, t: Optional[float] = None, eps_ladder=None, n_paths: Optional[int] = None,
                seed: Optional[int] = None, cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """X_eps(t) against kappa t^{1+a+b}; the chain rule with f = identity"""
  return verify_chain_rule(p, "identity", t, eps_ladder, n_paths, seed, cfg, identity="qvar", pathwise=False)


def verify_ito_expectation(p: ProcessParams, F_spec: Family = "square", t: Optional[float] = None, eps_ladder=None,
                           n_paths: Optional[int] = None, seed: Optional[int] = None,
                           cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """E F(B_t) - F(0) against (1/2) kappa^-1 E J_eps(F', t)"""
  F = _family(F_spec)
  f = F.derivative()
  run = _setup(p, cfg, t, eps_ladder, n_paths, seed)
  t = run.cfg.t if t is None else t
  quad_rule = run.cfg.estimator.quad_rule
  target = float(F.mean(t ** p.order)) - float(F.f(np.zeros(1))[0])
  half_inv = .5 / p.kappa
  name = "ito:" + F.name

  out, estimates, expectations = [], [], []
  for eps in run.ladder:
    samples = half_inv * qcov_estimate(p, run.ensemble, f, t, eps, quad_rule)
    expected = half_inv * expected_qcov(p, run.grid, f, t, eps, quad_rule)
    estimates.append(samples)
    expectations.append(expected)
    out.append(_make_report(name, p, t, eps, samples, expected, run.tol.z_max, math.inf, abs(expected - target),
                            {"expected": expected, "analytic": target}))
  if len(run.ladder) >= 2:
    out.append(_extrapolated(name, run, t, estimates, expectations, target, p.order))
  return out


def _interp_expected(field: np.ndarray, x_grid: np.ndarray, x: float) -> float:
  return float(np.interp(x, x_grid, field, left=0., right=0.))


def verify_bouleau_yor(p: ProcessParams, f_spec: Family = "bump_right", t: Optional[float] = None, eps_ladder=None,
                       n_paths: Optional[int] = None, seed: Optional[int] = None,
                       cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """J_eps(f, t) against -kappa int f(x) L(dx, t) on the same paths.

  One report per eps judges the paired difference on z against its exact
  expectation on this grid. The closing report (epsilon 0) judges agreement at
  relative error pathwise_rel_max: for a smooth f the Richardson-extrapolated
  J against the Stieltjes side, for a step the two-point form
  kappa (L(jump) - L(hi)) against kappa E L(jump, t). A zero-mean f is
  judged on the paired z score alone.
  """
  _require(p, qcov=True, localtime=True)
  fspec = _family(f_spec)
  run = _setup(p, cfg, t, eps_ladder, n_paths, seed)
  t = run.cfg.t if t is None else t
  quad_rule = run.cfg.estimator.quad_rule
  est = run.estimator_config(t)
  step = fspec.jump is not None
  name = "bouleau-yor:" + fspec.name

  def local_side(lt_cfg: EstimatorConfig) -> tuple[np.ndarray, float]:
    lt = local_time_field(p, run.ensemble, lt_cfg)
    if not step:
      return (-p.kappa * stieltjes_against_local_time(fspec, lt, t, per_path=True),
              -p.kappa * expected_stieltjes(fspec, p, run.grid, lt_cfg, t))
    # [1_{(jump, hi]}(B), B] = kappa (L(jump) - L(hi)) with hi at the lattice end
    hi = lt.x_grid[-1]
    mean_field = expected_local_time_field(p, run.grid, lt_cfg)[:, lt.t_index(t)]
    exact = _interp_expected(mean_field, lt_cfg.x_grid, fspec.jump) - _interp_expected(mean_field, lt_cfg.x_grid, hi)
    return p.kappa * lt.two_point(fspec.jump, hi, t), p.kappa * exact

  rhs, rhs_exact = local_side(est)
  if step:
    analytic = p.kappa * float(expected_weighted_local_time(p, t, fspec.jump))
  else:
    analytic = chain_target(p, fspec, t) if fspec.differentiable else rhs_exact
  zero_mean = abs(analytic) <= ZERO_TARGET

  out, lhs_all, lhs_exact_all = [], [], []
  for eps in run.ladder:
    lhs = qcov_estimate(p, run.ensemble, fspec, t, eps, quad_rule)
    lhs_exact = expected_qcov(p, run.grid, fspec, t, eps, quad_rule)
    lhs_all.append(lhs)
    lhs_exact_all.append(lhs_exact)
    extra = {"lhs_mean": float(np.mean(lhs)), "rhs_mean": float(np.mean(rhs)), "lhs_expected": lhs_exact,
             "rhs_expected": rhs_exact, "bandwidth": est.bandwidth}
    out.append(_make_report(name, p, t, eps, lhs - rhs, lhs_exact - rhs_exact, run.tol.z_max, math.inf,
                            abs(lhs_exact - rhs_exact), extra))

  extra = {"analytic": analytic, "rhs_expected": rhs_exact, "bandwidth": est.bandwidth}
  # bandwidth halved at fixed paths
  rhs_half, _ = local_side(run.estimator_config(t, bandwidth=est.bandwidth / 2.))
  extra["rhs_half_bandwidth"] = float(np.mean(rhs_half))
  extra["bandwidth_shift"] = abs(extra["rhs_half_bandwidth"] - float(np.mean(rhs)))
  if math.isfinite(fspec.lipschitz):
    extra["bandwidth_budget"] = 2. * est.bandwidth * fspec.lipschitz * t ** p.order

  lhs, lhs_exact = lhs_all[-1], lhs_exact_all[-1]
  if len(run.ladder) >= 2:
    ratio, order = run.ladder[-2] / run.ladder[-1], bias_order(p, fspec)
    lhs = richardson(lhs_all[-1], lhs_all[-2], ratio, order)
    lhs_exact = float(richardson(lhs_exact_all[-1], lhs_exact_all[-2], ratio, order))
    extra.update(ratio=ratio, order=order)
  extra.update(extrapolated_lhs=float(np.mean(lhs)), extrapolated_expected=lhs_exact)

  rel_max = run.tol.pathwise_rel_max
  if step:
    extra["two_point_expected"] = rhs_exact
    out.append(_make_report(name, p, t, 0., rhs, analytic, math.inf, rel_max, abs(rhs_exact - analytic), extra))
  else:
    _, se = _stats(lhs - rhs)
    z_max, rel_max = (run.tol.z_max, math.inf) if zero_mean else (math.inf, rel_max)
    out.append(_judged(name, p, t, 0., run.ensemble.n_paths, float(np.mean(lhs)), se, float(np.mean(rhs)), z_max, rel_max,
                       abs(lhs_exact - rhs_exact), extra))
  return out


def verify_tanaka_expectation(p: ProcessParams, x: Optional[float] = None, t: Optional[float] = None,
                              n_paths: Optional[int] = None, seed: Optional[int] = None,
                              cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """E|B_t - x| = |x| + E L(x, t) with the local time field as the Monte Carlo side.

  The field is judged on z against its exact expectation at this bandwidth;
  the analytic side passes when the lemma holds to oracle_tol by quadrature.
  """
  _require(p, localtime=True)
  run = _setup(p, cfg, t, None, n_paths, seed)
  t = run.cfg.t if t is None else t
  x = run.cfg.x if x is None else x
  est = run.estimator_config(t)
  field = local_time_field(p, run.ensemble, est)
  k = field.t_index(t)

  analytic = float(expected_abs_deviation(p, t, x)) - abs(x)
  expected = _interp_expected(expected_local_time_field(p, run.grid, est)[:, k], est.x_grid, x)
  analytic_gap = abs(float(expected_weighted_local_time(p, t, x)) - analytic)
  samples = field.at(x, t)
  mirror = field.at(-x, t)
  extra = {"analytic": analytic, "analytic_gap": analytic_gap, "bandwidth": est.bandwidth,
           "mirror_mean": float(np.mean(mirror)), "mirror_se": _stats(samples - mirror)[1]}
  ok = analytic_gap <= run.tol.oracle_tol
  return [_make_report("tanaka", p, t, est.epsilon, samples, expected, run.tol.z_max, math.inf, abs(expected - analytic),
                       extra, ok)]


def verify_tanaka_positive(p: ProcessParams, x: Optional[float] = None, t: Optional[float] = None,
                           n_paths: Optional[int] = None, seed: Optional[int] = None,
                           cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """E(B_t - x)^+ = (-x)^+ + (1/2) E L(x, t)"""
  _require(p, localtime=True)
  run = _setup(p, cfg, t, None, n_paths, seed)
  t = run.cfg.t if t is None else t
  x = run.cfg.x if x is None else x
  est = run.estimator_config(t)
  field = local_time_field(p, run.ensemble, est)

  analytic = float(expected_positive_part(p, t, x))
  expected = max(-x, 0.) + .5 * _interp_expected(expected_local_time_field(p, run.grid, est)[:, field.t_index(t)], est.x_grid, x)
  samples = max(-x, 0.) + .5 * field.at(x, t)
  return [_make_report("tanaka-positive", p, t, est.epsilon, samples, expected, run.tol.z_max, math.inf,
                       abs(expected - analytic), {"analytic": analytic})]


def verify_fourth_moment(p: ProcessParams, t: Optional[float] = None, eps: Optional[float] = None, lag: Optional[float] = None,
                         n_paths: Optional[int] = None, seed: Optional[int] = None,
                         cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """E[X^2 Y^2] = E[X^2] E[Y^2] + 2 (E[XY])^2 for increments X, Y over eps, lag apart.

  Each path contributes the average of X^2 Y^2 / target over every pair of
  increments of the grid up to t, so the target is 1.
  """
  run = _setup(p, cfg, t, None, n_paths, seed)
  t = run.cfg.t if t is None else t
  eps = run.fine if eps is None else eps
  lag = 4. * eps if lag is None else lag
  grid = run.grid
  k, d = int(round(eps / grid.step)), int(round(lag / grid.step))
  if k < 1 or d < 1 or abs(k * grid.step - eps) > 1e-9 * grid.step or abs(d * grid.step - lag) > 1e-9 * grid.step:
    raise DomainError("eps and lag must be positive multiples of the grid step")
  times, values = run.ensemble.with_origin()
  n = int(round(t / grid.step))
  first = np.arange(d, n - k + 1)
  if first.size == 0:
    raise DomainError("t is too short for one pair of increments")
  s, r = times[first], times[first - d]
  X = values[:, first + k] - values[:, first]
  Y = values[:, first - d + k] - values[:, first - d]
  target = (increment_variance(p, s + eps, s) * increment_variance(p, r + eps, r)
            + 2. * cross_covariance(p, s + eps, s, r + eps, r) ** 2)
  samples = np.mean(X ** 2 * Y ** 2 / target, axis=1)
  return [_make_report("fourth-moment", p, t, eps, samples, 1., run.tol.z_max, run.tol.rel_max,
                       extra={"lag": lag, "pairs": float(first.size)})]


def verify_hnorm_bound(p: ProcessParams, family: Sequence[Family] = HNORM_FAMILY, t: Optional[float] = None,
                       eps: Optional[float] = None, n_paths: Optional[int] = None, seed: Optional[int] = None,
                       cfg: Optional[RunConfig] = None) -> list[EstimateReport]:
  """E|J_eps(f, t)|^2 / ||f||_H^2 across a family, at eps and 2 eps.

  mc_mean is the ratio at eps and target the ratio at 2 eps; a report passes
  when the ratio is finite and moves by at most stability_max.
  """
  _require(p, qcov=True)
  run = _setup(p, cfg, t, None, n_paths, seed)
  t = run.cfg.t if t is None else t
  eps = run.fine if eps is None else eps
  coarse = 2. * eps
  quad_rule = run.cfg.estimator.quad_rule
  stability = run.tol.stability_max

  out, fine_ratios, coarse_ratios = [], [], []
  for name in family:
    fspec = _family(name)
    norm_sq = h_norm(fspec, t, p) ** 2
    if norm_sq == 0.:
      raise DomainError(f"{fspec.name} has zero H-norm")
    j_fine = qcov_estimate(p, run.ensemble, fspec, t, eps, quad_rule)
    j_coarse = qcov_estimate(p, run.ensemble, fspec, t, coarse, quad_rule)
    fwd, bwd = qcov_parts(p, run.ensemble, fspec, t, eps, quad_rule)
    fine_samples = j_fine ** 2 / norm_sq
    r_fine, se = _stats(fine_samples)
    r_coarse = float(np.mean(j_coarse ** 2)) / norm_sq
    fine_ratios.append(r_fine)
    coarse_ratios.append(r_coarse)
    shift = abs(r_fine - r_coarse) / r_coarse if r_coarse > 0. else abs(r_fine)
    z = (r_fine - r_coarse) / se if se > 0. else 0.
    ok = math.isfinite(r_fine) and math.isfinite(r_coarse) and shift <= stability
    extra = {"h_norm_sq": norm_sq, "eps_coarse": coarse, "forward_ratio": float(np.mean(fwd ** 2)) / norm_sq,
             "backward_ratio": float(np.mean(bwd ** 2)) / norm_sq}
    out.append(EstimateReport("hnorm:" + fspec.name, p.a, p.b, t, eps, run.ensemble.n_paths, r_fine, se, r_coarse, 0.,
                              z, shift, ok, extra))

  top_fine, top_coarse = max(fine_ratios), max(coarse_ratios)
  shift = abs(top_fine - top_coarse) / top_coarse if top_coarse > 0. else abs(top_fine)
  ok = math.isfinite(top_fine) and shift <= stability
  out.append(EstimateReport("hnorm:max", p.a, p.b, t, eps, run.ensemble.n_paths, top_fine, 0., top_coarse, 0., 0., shift, ok,
                            {"eps_coarse": coarse, "members": float(len(fine_ratios))}))
  LOGGER.info("hnorm: max ratio %.6g at eps=%g, %.6g at eps=%g", top_fine, eps, top_coarse, coarse)
  return out


# *** registry ***

def _run_chain(p, cfg):
  return [r for f in ("cube", "bump") for r in verify_chain_rule(p, f, cfg=cfg)]


def _run_ito(p, cfg):
  return [r for F in ("square", "identity", "cos") for r in verify_ito_expectation(p, F, cfg=cfg)]


def _run_bouleau_yor(p, cfg):
  return [r for f in ("bump_right", "step") for r in verify_bouleau_yor(p, f, cfg=cfg)]


identities: dict[str, tuple] = {
  # identity: (harness, needs qcov regime, needs local time regime)
  "qvar": (lambda p, cfg: verify_qvar(p, cfg=cfg), False, False),
  "chain": (_run_chain, False, False),
  "ito": (_run_ito, False, False),
  "bouleau-yor": (_run_bouleau_yor, True, True),
  "tanaka": (lambda p, cfg: verify_tanaka_expectation(p, cfg=cfg), False, True),
  "tanaka-positive": (lambda p, cfg: verify_tanaka_positive(p, cfg=cfg), False, True),
  "fourth-moment": (lambda p, cfg: verify_fourth_moment(p, cfg=cfg), False, False),
  "hnorm": (lambda p, cfg: verify_hnorm_bound(p, cfg=cfg), True, False),
}


@dataclass(frozen=True)
class Identity:
  name: str
  run: Callable[[ProcessParams, RunConfig], list]
  needs_qcov: bool
  needs_localtime: bool

  def applies(self, p: ProcessParams) -> bool:
    return (p.flags.qcov_regime or not self.needs_qcov) and (p.flags.localtime_regime or not self.needs_localtime)


IDENTITIES = {name: Identity(name, *spec) for name, spec in identities.items()}


def run_identity(name: str, cfg: RunConfig) -> list[EstimateReport]:
  if name not in IDENTITIES:
    raise DomainError(f"unknown identity {name!r}, expected one of {sorted(IDENTITIES) + ['all']}")
  p = validate_params(cfg.params.a, cfg.params.b)
  ident = IDENTITIES[name]
  if not ident.applies(p):
    LOGGER.warning("skipping %s: (a=%g, b=%g) is outside its regime", name, p.a, p.b)
    return []
  return ident.run(p, cfg)


def run_all(cfg: RunConfig) -> list[EstimateReport]:
  return [r for name in IDENTITIES for r in run_identity(name, cfg)]


def write_reports_csv(reports: Sequence[EstimateReport], path: str, header: Optional[str] = None) -> None:
  with open_csv(path, REPORT_COLUMNS, header) as w:
    for rep in reports:
      w.writerow(rep.csv_row())
