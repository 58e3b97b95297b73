#!/usr/bin/env python3
"""wfbm command line: sample | qcov | local-time | verify | scan | hnorm

Exit codes: 0 pass, 1 verdict failure, 2 config error, 3 numerical error.
"""
import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from wfbm import __version__, schema
from wfbm.config import RunConfig
from wfbm.errors import ConfigError, NumericalError
from wfbm.estimators import (EstimatorConfig, expected_qcov, h_norm, local_time_field, qcov_estimate, write_estimates_csv,
                             write_field_csv)
from wfbm.families import get_family
from wfbm.inequality_lab import TWO_SIDED, scan, write_scan_csv
from wfbm.kernel import validate_params
from wfbm.output import fmt, header_line, open_csv, write_metadata
from wfbm.sampler import build_grid, ensemble_metadata, sample_paths, write_ensemble_csv
from wfbm.verify import HNORM_FAMILY, IDENTITIES, run_all, run_identity, verify_hnorm_bound, write_reports_csv

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# flag: config key
FLAG_KEYS = {
  "a": "params.a",
  "b": "params.b",
  "t": "t",
  "x": "x",
  "n": "mc.n_paths",
  "seed": "mc.seed",
  "threads": "mc.threads",
  "step": "grid.step",
  "horizon": "grid.horizon",
  "eps": "estimator.eps_ladder",
  "out": "output_dir",
}


def build_parser() -> argparse.ArgumentParser:
  common = argparse.ArgumentParser(add_help=False)
  common.add_argument("--config", help="key = value config file; flags override it")
  # numbers stay text so '1/1024' works
  common.add_argument("--a")
  common.add_argument("--b")
  common.add_argument("--t", help="evaluation time")
  common.add_argument("--x", help="Tanaka level")
  common.add_argument("--n", help="number of paths")
  common.add_argument("--seed")
  common.add_argument("--threads")
  common.add_argument("--step", help="grid step")
  common.add_argument("--horizon")
  common.add_argument("--eps", help="comma separated eps ladder")
  common.add_argument("--out", help="output directory (default $WFBM_OUTPUT_DIR or .)")
  common.add_argument("--emit-plot-script", action="store_true", help="also write a matplotlib script for the CSVs")
  common.add_argument("-v", "--verbose", action="count", default=0)

  parser = argparse.ArgumentParser(prog="wfbm", description=__doc__.splitlines()[0])
  parser.add_argument("--version", action="version", version=f"wfbm {__version__}")
  sub = parser.add_subparsers(dest="command", required=True)
  sub.add_parser("sample", parents=[common], help="sample a path ensemble")
  p = sub.add_parser("qcov", parents=[common], help="J_eps(f, t) along the eps ladder")
  p.add_argument("--f", default="identity", help="function family name")
  sub.add_parser("local-time", parents=[common], help="weighted local time field")
  p = sub.add_parser("verify", parents=[common], help="Monte Carlo identity checks")
  p.add_argument("--identity", default="all", choices=sorted(IDENTITIES) + ["all"])
  p = sub.add_parser("scan", parents=[common], help="inequality ratio scans")
  p.add_argument("--lemma", default="all")
  p = sub.add_parser("hnorm", parents=[common], help="H-norms and the second moment bound")
  p.add_argument("--f", action="append", help="function family name, repeatable")
  return parser


def load_config(args: argparse.Namespace) -> RunConfig:
  cfg = RunConfig()
  if args.config:
    try:
      cfg = RunConfig.from_file(args.config)
    except OSError as e:
      raise ConfigError(f"cannot read config {args.config}: {e.strerror}") from None
  items = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items() if getattr(args, flag) is not None}
  return cfg.override(items)


class Run:
  """Output bookkeeping shared by the subcommands"""
  def __init__(self, cfg: RunConfig, command: str):
    self.cfg = cfg
    self.command = command
    self.header = header_line(cfg.config_hash(), cfg.mc.seed)
    self.csvs: list[str] = []

  def path(self, name: str) -> str:
    path = os.path.join(self.cfg.output_dir, name)
    self.csvs.append(path)
    return path

  def record(self, reports=(), scans=(), ensemble=None) -> None:
    p = validate_params(self.cfg.params.a, self.cfg.params.b)
    fields = {
      "version": __version__,
      "configHash": self.cfg.config_hash(),
      "config": self.cfg.to_message().to_dict(),
      "reports": [r.to_message().to_dict() for r in reports],
      "scans": [s.to_message(p).to_dict() for s in scans],
    }
    if ensemble is not None:
      fields["ensemble"] = ensemble.to_dict()
    write_metadata(schema.RunRecord.new_message(**fields), os.path.join(self.cfg.output_dir, self.command))


def _grid_for(cfg: RunConfig, t_eval: Sequence[float]):
  return build_grid(max(cfg.grid.horizon, max(t_eval)), cfg.grid.step, cfg.pad())


def _t_eval(cfg: RunConfig) -> tuple[float, ...]:
  return tuple(sorted(set(cfg.t_eval()) | {cfg.t}))


def cmd_sample(cfg: RunConfig, args: argparse.Namespace, run: Run) -> int:
  p = validate_params(cfg.params.a, cfg.params.b)
  g = build_grid(cfg.grid.horizon, cfg.grid.step, cfg.grid.pad)
  ens = sample_paths(p, g, cfg.mc.n_paths, cfg.mc.seed, cfg.mc.threads)
  write_ensemble_csv(ens, run.path("paths.csv"), run.header)
  meta = ensemble_metadata(ens)
  write_metadata(meta, os.path.join(cfg.output_dir, "paths"))
  run.record(ensemble=meta)
  return EXIT_OK


def cmd_qcov(cfg: RunConfig, args: argparse.Namespace, run: Run) -> int:
  p = validate_params(cfg.params.a, cfg.params.b)
  fspec = get_family(args.f)
  t_eval = _t_eval(cfg)
  g = _grid_for(cfg, t_eval)
  ens = sample_paths(p, g, cfg.mc.n_paths, cfg.mc.seed, cfg.mc.threads)
  rule = cfg.estimator.quad_rule

  estimates = {eps: qcov_estimate(p, ens, fspec, t_eval, eps, rule) for eps in cfg.eps_ladder()}
  write_estimates_csv(estimates, t_eval, run.path("qcov.csv"), run.header)
  with open_csv(run.path("qcov_summary.csv"), ["f", "epsilon", "t", "mean", "stderr", "expected"], run.header) as w:
    for eps, vals in estimates.items():
      expected = expected_qcov(p, g, fspec, t_eval, eps, rule) if fspec.differentiable or fspec.jump is not None else np.full(len(t_eval), np.nan)
      mean = vals.mean(axis=0)
      se = vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0]) if vals.shape[0] > 1 else np.zeros(len(t_eval))
      for k, t in enumerate(t_eval):
        w.writerow([fspec.name] + [fmt(float(v)) for v in (eps, t, mean[k], se[k], expected[k])])
  run.record(ensemble=ensemble_metadata(ens))
  return EXIT_OK


def cmd_local_time(cfg: RunConfig, args: argparse.Namespace, run: Run) -> int:
  p = validate_params(cfg.params.a, cfg.params.b)
  t_eval = _t_eval(cfg)
  g = _grid_for(cfg, t_eval)
  ens = sample_paths(p, g, cfg.mc.n_paths, cfg.mc.seed, cfg.mc.threads)
  est = cfg.estimator
  ecfg = EstimatorConfig.default(p, g, max(cfg.eps_ladder()), t_eval, cfg.bandwidth(), est.x_half_width, est.x_step, est.quad_rule)
  field = local_time_field(p, ens, ecfg)
  write_field_csv(field, run.path("local_time.csv"), run.header)
  run.record(ensemble=ensemble_metadata(ens))
  return EXIT_OK


def cmd_verify(cfg: RunConfig, args: argparse.Namespace, run: Run) -> int:
  reports = run_all(cfg) if args.identity == "all" else run_identity(args.identity, cfg)
  write_reports_csv(reports, run.path("verify.csv"), run.header)
  run.record(reports=reports)
  failed = [r.identity_id for r in reports if not r.passed]
  if failed:
    LOGGER.error("failed: %s", ", ".join(failed))
  return EXIT_FAIL if failed else EXIT_OK


def cmd_scan(cfg: RunConfig, args: argparse.Namespace, run: Run) -> int:
  p = validate_params(cfg.params.a, cfg.params.b)
  reports = scan(p, args.lemma)
  write_scan_csv(reports, run.path("scan.csv"), run.header)
  run.record(scans=reports)
  bad = [r.lemma_id for r in reports
         if r.violations or not np.isfinite(r.max_ratio) or (r.lemma_id in TWO_SIDED and not r.min_ratio > 0.)]
  if bad:
    LOGGER.error("scans with violations or degenerate ratios: %s", ", ".join(bad))
  return EXIT_FAIL if bad else EXIT_OK


def cmd_hnorm(cfg: RunConfig, args: argparse.Namespace, run: Run) -> int:
  p = validate_params(cfg.params.a, cfg.params.b)
  names = args.f or list(HNORM_FAMILY)
  with open_csv(run.path("hnorm.csv"), ["f", "T", "h_norm"], run.header) as w:
    for name in names:
      w.writerow([name, fmt(cfg.t), fmt(h_norm(get_family(name), cfg.t, p))])
  if not p.flags.qcov_regime:
    LOGGER.warning("b = %g >= 0: skipping the second moment ratios", p.b)
    run.record()
    return EXIT_OK
  reports = verify_hnorm_bound(p, names, cfg=cfg)
  write_reports_csv(reports, run.path("hnorm_ratios.csv"), run.header)
  run.record(reports=reports)
  return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


COMMANDS = {
  "sample": cmd_sample,
  "qcov": cmd_qcov,
  "local-time": cmd_local_time,
  "verify": cmd_verify,
  "scan": cmd_scan,
  "hnorm": cmd_hnorm,
}


def build_plot_script(csvs: Sequence[str]) -> str:
  h = "#!/usr/bin/env python3\n"
  h += "# generated by wfbm " + __version__ + "\n"
  h += "import csv\nimport sys\n\nimport matplotlib.pyplot as plt\n\n"
  h += "CSVS = [\n"
  for path in csvs:
    h += f"  {os.path.abspath(path)!r},\n"
  h += "]\n\n\n"
  h += "def load(path):\n"
  h += "  with open(path, newline='') as f:\n"
  h += "    rows = [r for r in csv.reader(f) if r and not r[0].lstrip('\"').startswith('#')]\n"
  h += "  return rows[0], rows[1:]\n\n\n"
  h += "def numeric(rows, i):\n"
  h += "  out = []\n"
  h += "  for r in rows:\n"
  h += "    try:\n"
  h += "      out.append(float(r[i]))\n"
  h += "    except (ValueError, IndexError):\n"
  h += "      out.append(float('nan'))\n"
  h += "  return out\n\n\n"
  h += "for path in CSVS:\n"
  h += "  columns, rows = load(path)\n"
  h += "  fig, ax = plt.subplots()\n"
  h += "  x = numeric(rows, 1 if columns[0] in ('path_id', 'identity', 'lemma', 'f') else 0)\n"
  h += "  for i, name in enumerate(columns[2:], start=2):\n"
  h += "    y = numeric(rows, i)\n"
  h += "    if any(v == v for v in y):\n"
  h += "      ax.plot(x, y, '.', markersize=2, label=name)\n"
  h += "  ax.set_title(path)\n"
  h += "  ax.legend()\n"
  h += "  fig.savefig(path[:-len('.csv')] + '.png', dpi=120)\n\n"
  h += "if '--show' in sys.argv:\n"
  h += "  plt.show()\n"
  return h


def main(argv: Optional[Sequence[str]] = None) -> int:
  args = build_parser().parse_args(argv)
  logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                      format="%(asctime)s %(name)s %(levelname)s %(message)s")
  try:
    cfg = load_config(args)
    run = Run(cfg, args.command)
    code = COMMANDS[args.command](cfg, args, run)
    if args.emit_plot_script:
      script = os.path.join(cfg.output_dir, f"plot_{args.command.replace('-', '_')}.py")
      with open(script, "w") as f:
        f.write(build_plot_script(run.csvs))
      LOGGER.info("wrote %s", script)
  except ConfigError as e:
    print(f"wfbm: config error: {e}", file=sys.stderr)
    return EXIT_CONFIG
  except NumericalError as e:
    print(f"wfbm: numerical error: {e}", file=sys.stderr)
    return EXIT_NUMERICAL
  return code


if __name__ == "__main__":
  sys.exit(main())
