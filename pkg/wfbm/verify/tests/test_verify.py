#!/usr/bin/env python3
import math
import os
import tempfile
import unittest
import warnings
from parameterized import parameterized

import numpy as np

from wfbm.config import RunConfig
from wfbm.errors import DomainError
from wfbm.families import get_family
from wfbm.kernel import expected_weighted_local_time, validate_params
from wfbm.verify import (IDENTITIES, REPORT_COLUMNS, ZERO_TARGET, bias_order, chain_target, run_all, run_identity, verdict,
                         verify_bouleau_yor, verify_chain_rule, verify_fourth_moment, verify_hnorm_bound,
                         verify_ito_expectation, verify_qvar, verify_tanaka_expectation, verify_tanaka_positive,
                         write_reports_csv)


def small_config(a, b, n_paths=300):
  return RunConfig.from_ab(a, b).override({"grid.step": "1/256", "mc.n_paths": n_paths, "mc.seed": 5})


P = validate_params(-.3, -.4)
CFG = small_config(-.3, -.4)


class TestVerdict(unittest.TestCase):

  def test_within_noise(self):
    z, rel, ok = verdict(1.01, .005, 1., 4., .05)
    self.assertAlmostEqual(z, 2.)
    self.assertAlmostEqual(rel, .01)
    self.assertTrue(ok)

  def test_outside_noise(self):
    self.assertFalse(verdict(1.03, .005, 1., 4., .05)[2])

  def test_relative_bound(self):
    # inside 4 standard errors but 10% off
    self.assertFalse(verdict(1.1, .05, 1., 4., .05)[2])
    self.assertTrue(verdict(1.1, .05, 1., 4., math.inf)[2])

  def test_z_not_judged(self):
    self.assertTrue(verdict(1.03, .001, 1., math.inf, .05)[2])

  def test_zero_stderr(self):
    self.assertTrue(verdict(2., 0., 2., 4., .05)[2])
    z, _, ok = verdict(2.1, 0., 2., 4., .05)
    self.assertEqual(z, math.inf)
    self.assertFalse(ok)

  def test_zero_target(self):
    _, rel, ok = verdict(.001, .001, 0., 4., .05)
    self.assertAlmostEqual(rel, .001)
    self.assertTrue(ok)

  def test_roundoff_target(self):
    # a cancelled integral is judged on z, not on a ratio against 4e-19
    z, rel, ok = verdict(.002, .001, 4.36e-19, 4., .05)
    self.assertAlmostEqual(z, 2.)
    self.assertAlmostEqual(rel, .002)
    self.assertTrue(ok)

  def test_nan(self):
    self.assertFalse(verdict(float("nan"), 1., 0., 4., .05)[2])
    self.assertFalse(verdict(float("nan"), 1., 0., math.inf, math.inf)[2])


def assert_judged(case, reports):
  """A passing report stays inside the z_max and rel_max it records"""
  for r in reports:
    if r.passed and "z_max" in r.extra:
      case.assertLessEqual(abs(r.z_score), r.extra["z_max"], r)
      if abs(r.target) > ZERO_TARGET:
        case.assertLessEqual(r.rel_err, r.extra["rel_max"], r)


class TestQvar(unittest.TestCase):

  @classmethod
  def setUpClass(cls):
    cls.reports = verify_qvar(P, cfg=CFG)

  def test_shape(self):
    self.assertEqual(len(self.reports), len(CFG.eps_ladder()) + 1)
    self.assertEqual([r.epsilon for r in self.reports[:-1]], sorted(CFG.eps_ladder(), reverse=True))
    self.assertEqual(self.reports[-1].epsilon, 0.)
    for r in self.reports:
      self.assertEqual(r.identity_id, "qvar")
    for r in self.reports[:-1]:
      self.assertEqual(r.target, r.extra["expected"])
      self.assertAlmostEqual(r.extra["analytic"], P.kappa, places=8)
      self.assertEqual(r.extra["rel_max"], math.inf)
    self.assertAlmostEqual(self.reports[-1].target, P.kappa, places=8)
    self.assertEqual(self.reports[-1].extra["rel_max"], CFG.tolerances.rel_max)

  def test_mean_matches_exact_expectation(self):
    for r in self.reports[:-1]:
      self.assertLess(abs(r.mc_mean - r.extra["expected"]), 5. * r.mc_stderr)

  def test_verdicts(self):
    for r in self.reports[:-1]:
      self.assertTrue(r.passed, r)
    assert_judged(self, self.reports)

  def test_bias_is_not_tolerance(self):
    # the coarse rung sits far from kappa; its verdict reflects only the noise around its own expectation
    coarse = self.reports[0]
    self.assertGreater(coarse.bias_budget, 5. * coarse.mc_stderr)
    self.assertAlmostEqual(coarse.bias_budget, abs(coarse.extra["expected"] - P.kappa), places=12)
    self.assertLess(abs(coarse.z_score), CFG.tolerances.z_max)

  def test_brownian_has_no_bias(self):
    cfg = small_config(0., 0.)
    for r in verify_qvar(validate_params(0., 0.), cfg=cfg)[:-1]:
      self.assertLess(r.bias_budget, 1e-12)
      self.assertTrue(r.passed, r)

  def test_message(self):
    msg = self.reports[0].to_message()
    self.assertEqual(msg.identity, "qvar")
    self.assertEqual(msg.nPaths, 300)
    keys = [e.key for e in msg.extra]
    self.assertEqual(keys, sorted(self.reports[0].extra))


class TestChainRule(unittest.TestCase):

  @parameterized.expand([("cube",), ("bump",)])
  def test_chain(self, name):
    reports = verify_chain_rule(P, name, cfg=CFG)
    finest = reports[-2]
    self.assertIn("pathwise_ok", finest.extra)
    self.assertLess(abs(finest.mc_mean - finest.extra["expected"]), 5. * finest.mc_stderr)
    # the pathwise criterion needs the finer default grid; rung verdicts do not
    for r in reports[:-2]:
      self.assertTrue(r.passed, r)
    self.assertTrue(all(math.isfinite(r.extra["mean_abs_diff"]) for r in reports))
    assert_judged(self, reports)

  def test_odd_derivative_has_zero_target(self):
    with warnings.catch_warnings():
      warnings.simplefilter("error")
      self.assertEqual(chain_target(P, get_family("bump"), 1.), 0.)
      reports = verify_chain_rule(P, "bump", cfg=CFG)
    for r in reports[:-2]:
      self.assertTrue(r.passed, r)
    extrap = reports[-1]
    self.assertEqual(extrap.target, 0.)
    self.assertTrue(extrap.passed, extrap)

  def test_shifted_bump_target(self):
    target = chain_target(P, get_family("bump_right"), 1.)
    self.assertGreater(target, 0.)
    self.assertLess(target, P.kappa * get_family("bump_right").lipschitz)
    self.assertLess(chain_target(P, get_family("bump_left"), 1.), 0.)

  def test_brownian_pathwise(self):
    p = validate_params(0., 0.)
    reports = verify_chain_rule(p, "cube", cfg=small_config(0., 0.))
    diffs = [r.extra["mean_abs_diff"] for r in reports[:-1]]
    self.assertLess(diffs[-1], diffs[0])

  def test_cube_target(self):
    # 3 kappa int_0^1 v dv
    self.assertAlmostEqual(chain_target(P, get_family("cube"), 1.), 1.5 * P.kappa, places=8)

  def test_needs_derivative(self):
    with self.assertRaises(DomainError):
      verify_chain_rule(P, "step", cfg=CFG)


class TestIto(unittest.TestCase):

  @parameterized.expand([("square",), ("cos",)])
  def test_ito(self, name):
    reports = verify_ito_expectation(P, name, cfg=CFG)
    for r in reports[:-1]:
      self.assertTrue(r.passed, r)
    assert_judged(self, reports)

  def test_targets(self):
    sq = verify_ito_expectation(P, "square", cfg=CFG)
    self.assertAlmostEqual(sq[0].extra["analytic"], 1., places=10)
    self.assertAlmostEqual(sq[-1].target, 1., places=10)
    cos = verify_ito_expectation(P, "cos", cfg=CFG)
    self.assertAlmostEqual(cos[-1].target, math.exp(-.5) - 1., places=8)


class TestLocalTimeIdentities(unittest.TestCase):

  @parameterized.expand([("bump_right",), ("bump",), ("step",)])
  def test_bouleau_yor(self, name):
    reports = verify_bouleau_yor(P, name, cfg=CFG)
    self.assertEqual(len(reports), len(CFG.eps_ladder()) + 1)
    self.assertEqual({r.identity_id for r in reports}, {"bouleau-yor:" + name})
    for r in reports[:-1]:
      self.assertTrue(r.passed, r)
      self.assertAlmostEqual(r.target, r.extra["lhs_expected"] - r.extra["rhs_expected"], places=12)
    closing = reports[-1]
    self.assertEqual(closing.epsilon, 0.)
    self.assertIn("bandwidth_shift", closing.extra)
    self.assertIn("extrapolated_lhs", closing.extra)
    assert_judged(self, reports)
    if name == "step":
      self.assertAlmostEqual(closing.target, P.kappa * float(expected_weighted_local_time(P, 1., 0.)), places=10)
      self.assertAlmostEqual(closing.extra["order"], P.order / 2.)
      self.assertIn("two_point_expected", closing.extra)
      self.assertEqual((closing.extra["z_max"], closing.extra["rel_max"]), (math.inf, CFG.tolerances.pathwise_rel_max))
    elif name == "bump":
      # zero on both sides by symmetry, so only the paired z score is judged
      self.assertEqual(closing.extra["analytic"], 0.)
      self.assertEqual(closing.extra["rel_max"], math.inf)
      self.assertTrue(closing.passed, closing)
    else:
      self.assertGreater(closing.extra["analytic"], 0.)
      self.assertIn("bandwidth_budget", closing.extra)
      self.assertEqual(closing.extra["rel_max"], CFG.tolerances.pathwise_rel_max)

  def test_bouleau_yor_defaults(self):
    reports = run_identity("bouleau-yor", RunConfig.from_ab(-.3, -.4))
    self.assertEqual([r.identity_id for r in reports[::4]], ["bouleau-yor:bump_right", "bouleau-yor:step"])
    for r in reports:
      self.assertTrue(r.passed, r)

  def test_bias_order(self):
    self.assertEqual(bias_order(P, get_family("cube")), P.order)
    self.assertEqual(bias_order(P, get_family("step")), P.order / 2.)

  def test_bouleau_yor_regime(self):
    with self.assertRaises(DomainError):
      verify_bouleau_yor(validate_params(0., 0.), "bump", cfg=small_config(0., 0.))

  @parameterized.expand([(0.,), (.5,), (-.8,)])
  def test_tanaka(self, x):
    rep, = verify_tanaka_expectation(P, x, cfg=CFG)
    self.assertLess(rep.extra["analytic_gap"], 1e-8)
    self.assertLess(abs(rep.mc_mean - rep.target), 5. * rep.mc_stderr)
    self.assertTrue(rep.passed, rep)
    assert_judged(self, [rep])
    if x == 0.:
      self.assertAlmostEqual(rep.extra["analytic"], math.sqrt(2. / math.pi), places=10)
      self.assertAlmostEqual(rep.bias_budget, abs(rep.target - math.sqrt(2. / math.pi)), places=12)

  def test_tanaka_positive(self):
    rep, = verify_tanaka_positive(P, .3, cfg=CFG)
    self.assertTrue(rep.passed, rep)
    self.assertIn("analytic", rep.extra)


class TestMoments(unittest.TestCase):

  def test_fourth_moment(self):
    rep, = verify_fourth_moment(P, cfg=small_config(-.3, -.4, n_paths=500))
    self.assertEqual(rep.target, 1.)
    self.assertLess(abs(rep.mc_mean - 1.), 5. * rep.mc_stderr)
    self.assertGreater(rep.extra["pairs"], 100)

  def test_fourth_moment_grid(self):
    with self.assertRaises(DomainError):
      verify_fourth_moment(P, eps=1.5 / 256, cfg=CFG)

  def test_hnorm(self):
    reports = verify_hnorm_bound(P, ("constant", "bump", "bump_narrow"), cfg=CFG)
    self.assertEqual([r.identity_id for r in reports], ["hnorm:constant", "hnorm:bump", "hnorm:bump_narrow", "hnorm:max"])
    self.assertEqual(reports[0].mc_mean, 0.)
    self.assertTrue(reports[0].passed)
    for r in reports:
      self.assertTrue(math.isfinite(r.mc_mean) and math.isfinite(r.target))
    self.assertEqual(reports[-1].mc_mean, max(r.mc_mean for r in reports[:-1]))


class TestRegistry(unittest.TestCase):

  def test_skips_outside_regime(self):
    cfg = small_config(0., 0.)
    self.assertEqual(run_identity("hnorm", cfg), [])
    self.assertEqual(run_identity("bouleau-yor", cfg), [])

  def test_unknown(self):
    with self.assertRaises(DomainError):
      run_identity("girsanov", CFG)

  def test_run_all_brownian_defaults(self):
    reports = run_all(RunConfig.from_ab(0., 0.))
    ids = {r.identity_id for r in reports}
    self.assertTrue({"qvar", "chain", "ito:square", "ito:cos", "tanaka", "tanaka-positive", "fourth-moment"} <= ids)
    self.assertFalse(any(i.startswith(("hnorm", "bouleau-yor")) for i in ids))
    for r in reports:
      self.assertTrue(r.passed, r)
    assert_judged(self, reports)

  def test_regimes(self):
    self.assertTrue(IDENTITIES["bouleau-yor"].needs_qcov)
    self.assertTrue(IDENTITIES["tanaka"].applies(validate_params(0., 0.)))
    self.assertFalse(IDENTITIES["tanaka"].applies(validate_params(3., .5)))

  def test_reproducible_csv(self):
    reports = run_identity("tanaka", CFG)
    again = run_identity("tanaka", CFG)
    with tempfile.TemporaryDirectory() as d:
      paths = [os.path.join(d, f"r{i}.csv") for i in range(2)]
      write_reports_csv(reports, paths[0], "# h")
      write_reports_csv(again, paths[1], "# h")
      with open(paths[0]) as f0, open(paths[1]) as f1:
        first, second = f0.read(), f1.read()
    self.assertEqual(first, second)
    lines = first.splitlines()
    self.assertEqual(lines[1], ",".join(REPORT_COLUMNS))
    self.assertIn(lines[2].split(",")[-1], ("pass", "fail"))
    self.assertTrue(np.isfinite(float(lines[2].split(",")[6])))


if __name__ == "__main__":
  unittest.main()
