import hashlib
import logging
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from fractions import Fraction
from typing import Any, Optional

from wfbm import schema
from wfbm.errors import ConfigError

LOGGER = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "WFBM_OUTPUT_DIR"
QUAD_RULES = ("left", "trapezoid")
DEFAULT_PARAMS = ((0., 0.), (-.3, -.4), (.5, -.3))


def default_output_dir() -> str:
  return os.getenv(OUTPUT_DIR_ENV, ".")


@dataclass(frozen=True)
class ParamsConfig:
  a: float = -.3
  b: float = -.4


@dataclass(frozen=True)
class GridConfig:
  horizon: float = 1.
  step: float = 1. / 1024
  # 0: twice the largest lookahead
  pad: float = 0.


@dataclass(frozen=True)
class EstimatorSettings:
  # empty: (32, 16, 8) grid steps
  eps_ladder: tuple[float, ...] = ()
  # 0: 2 * sqrt(step^(1+b) * horizon^a)
  bandwidth: float = 0.
  # 0: 7 standard deviations at the end of the grid plus the bandwidth
  x_half_width: float = 0.
  # 0: bandwidth / 4
  x_step: float = 0.
  quad_rule: str = "left"
  # empty: (0.2, 0.4, 0.6, 0.8, 1.0) * t on the grid
  t_eval: tuple[float, ...] = ()


@dataclass(frozen=True)
class McConfig:
  n_paths: int = 500
  seed: int = 7
  threads: int = 1


@dataclass(frozen=True)
class Tolerances:
  z_max: float = 4.
  rel_max: float = .05
  pathwise_rel_max: float = .10
  stability_max: float = .20
  kernel_tol: float = 1e-10
  oracle_tol: float = 1e-6


@dataclass(frozen=True)
class RunConfig:
  params: ParamsConfig = field(default_factory=ParamsConfig)
  grid: GridConfig = field(default_factory=GridConfig)
  estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
  mc: McConfig = field(default_factory=McConfig)
  tolerances: Tolerances = field(default_factory=Tolerances)
  output_dir: str = field(default_factory=default_output_dir)
  t: float = 1.
  x: float = 0.

  def __post_init__(self):
    if self.estimator.quad_rule not in QUAD_RULES:
      raise ConfigError(f"estimator.quad_rule must be one of {QUAD_RULES}, got {self.estimator.quad_rule!r}")
    if self.mc.n_paths < 1:
      raise ConfigError("mc.n_paths must be >= 1")
    if self.mc.threads < 1:
      raise ConfigError("mc.threads must be >= 1")
    if not 0 <= self.mc.seed < 2 ** 64:
      raise ConfigError("mc.seed must fit in 64 bits")
    if not (self.grid.horizon > 0. and self.grid.step > 0. and self.grid.pad >= 0.):
      raise ConfigError("grid needs horizon > 0, step > 0, pad >= 0")
    if not self.t > 0.:
      raise ConfigError("t must be > 0")

  @classmethod
  def from_ab(cls, a: float, b: float, **kwargs) -> "RunConfig":
    return cls(params=ParamsConfig(a, b), **kwargs)

  # *** resolved defaults ***

  def eps_ladder(self) -> tuple[float, ...]:
    if self.estimator.eps_ladder:
      return tuple(self.estimator.eps_ladder)
    return tuple(k * self.grid.step for k in (32, 16, 8))

  def pad(self) -> float:
    return max(self.grid.pad, 2. * max(self.eps_ladder()))

  def t_eval(self) -> tuple[float, ...]:
    if self.estimator.t_eval:
      return tuple(self.estimator.t_eval)
    # snapped to grid times
    step = self.grid.step
    return tuple(max(1, round(k * self.t / 5. / step)) * step for k in range(1, 6))

  def bandwidth(self) -> float:
    if self.estimator.bandwidth > 0.:
      return self.estimator.bandwidth
    return 2. * (self.grid.step ** (1. + self.params.b) * self.grid.horizon ** self.params.a) ** .5

  # *** text form ***

  def to_items(self) -> dict[str, Any]:
    return dict(_flatten(self))

  def to_text(self) -> str:
    lines = []
    for key, value in _flatten(self):
      if isinstance(value, tuple):
        value = ", ".join(repr(v) for v in value)
      lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

  @classmethod
  def from_text(cls, text: str, base: Optional["RunConfig"] = None) -> "RunConfig":
    items = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
      line = raw.split("#", 1)[0].strip()
      if not line:
        continue
      if "=" not in line:
        raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
      key, value = (v.strip() for v in line.split("=", 1))
      items[key] = value
    return (base or cls()).override(items)

  @classmethod
  def from_file(cls, path: str, base: Optional["RunConfig"] = None) -> "RunConfig":
    with open(path) as f:
      return cls.from_text(f.read(), base)

  def override(self, items: dict[str, Any]) -> "RunConfig":
    """Returns a copy with dotted keys ('params.a', 'mc.seed', ...) replaced"""
    cfg: Any = self
    for key, value in items.items():
      cfg = _set(cfg, key.split("."), value, key)
    return cfg

  # *** capnp form ***

  def to_message(self):
    msg = schema.RunConfig.new_message()
    msg.params.a = self.params.a
    msg.params.b = self.params.b
    msg.grid.horizon = self.grid.horizon
    msg.grid.step = self.grid.step
    msg.grid.pad = self.grid.pad
    est = self.estimator
    msg.estimator.epsLadder = list(est.eps_ladder)
    msg.estimator.bandwidth = est.bandwidth
    msg.estimator.xHalfWidth = est.x_half_width
    msg.estimator.xStep = est.x_step
    msg.estimator.quadRule = est.quad_rule
    msg.estimator.tEval = list(est.t_eval)
    msg.mc.nPaths = self.mc.n_paths
    msg.mc.seed = self.mc.seed
    msg.mc.threads = self.mc.threads
    tol = self.tolerances
    msg.tolerances.zMax = tol.z_max
    msg.tolerances.relMax = tol.rel_max
    msg.tolerances.pathwiseRelMax = tol.pathwise_rel_max
    msg.tolerances.stabilityMax = tol.stability_max
    msg.tolerances.kernelTol = tol.kernel_tol
    msg.tolerances.oracleTol = tol.oracle_tol
    msg.outputDir = self.output_dir
    msg.t = self.t
    msg.x = self.x
    return msg

  def to_bytes(self) -> bytes:
    return self.to_message().to_bytes()

  @classmethod
  def from_message(cls, msg) -> "RunConfig":
    est = msg.estimator
    tol = msg.tolerances
    return cls(
      params=ParamsConfig(msg.params.a, msg.params.b),
      grid=GridConfig(msg.grid.horizon, msg.grid.step, msg.grid.pad),
      estimator=EstimatorSettings(tuple(est.epsLadder), est.bandwidth, est.xHalfWidth, est.xStep,
                                  str(est.quadRule), tuple(est.tEval)),
      mc=McConfig(msg.mc.nPaths, msg.mc.seed, msg.mc.threads),
      tolerances=Tolerances(tol.zMax, tol.relMax, tol.pathwiseRelMax, tol.stabilityMax, tol.kernelTol, tol.oracleTol),
      output_dir=msg.outputDir,
      t=msg.t,
      x=msg.x,
    )

  @classmethod
  def from_bytes(cls, dat: bytes) -> "RunConfig":
    with schema.RunConfig.from_bytes(dat) as msg:
      return cls.from_message(msg)

  def config_hash(self) -> str:
    # thread count and output location do not change results
    canon = replace(self, mc=replace(self.mc, threads=1), output_dir="")
    return hashlib.sha256(canon.to_bytes()).hexdigest()


def _flatten(obj, prefix: str = ""):
  for f in fields(obj):
    value = getattr(obj, f.name)
    if is_dataclass(value):
      yield from _flatten(value, prefix + f.name + ".")
    else:
      yield prefix + f.name, value


def _parse_float(text: str) -> float:
  try:
    return float(Fraction(text.strip()))
  except (ValueError, ZeroDivisionError):
    raise ConfigError(f"not a number: {text!r}") from None


def _coerce(current: Any, value: Any, key: str) -> Any:
  if not isinstance(value, str):
    if isinstance(current, tuple):
      return tuple(float(v) for v in value)
    return type(current)(value)
  if isinstance(current, bool):
    return value.lower() in ("1", "true", "yes")
  if isinstance(current, int):
    try:
      return int(value, 0)
    except ValueError:
      raise ConfigError(f"{key}: not an integer: {value!r}") from None
  if isinstance(current, float):
    return _parse_float(value)
  if isinstance(current, tuple):
    return tuple(_parse_float(v) for v in value.split(",") if v.strip())
  return value


def _set(obj: Any, path: list[str], value: Any, key: str) -> Any:
  names = {f.name for f in fields(obj)}
  if path[0] not in names:
    raise ConfigError(f"unknown config key {key!r}")
  current = getattr(obj, path[0])
  if len(path) > 1:
    if not is_dataclass(current):
      raise ConfigError(f"unknown config key {key!r}")
    return replace(obj, **{path[0]: _set(current, path[1:], value, key)})
  if is_dataclass(current):
    raise ConfigError(f"{key!r} is a section, not a value")
  return replace(obj, **{path[0]: _coerce(current, value, key)})
