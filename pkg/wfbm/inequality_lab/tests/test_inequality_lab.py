#!/usr/bin/env python3
import math
import os
import tempfile
import time
import unittest
from parameterized import parameterized

import numpy as np

from wfbm.config import DEFAULT_PARAMS
from wfbm.errors import DomainError, GridError
from wfbm.families import BUMPS, get_family
from wfbm.inequality_lab import (LEMMA_3_4, LEMMAS, ScanGrid, envelope, scan, scan_one_sided, scan_two_sided,
                                 write_scan_csv)
from wfbm.kernel import bivariate_density, covariance, validate_params

SMALL = ScanGrid(points=12, tuple_points=8)
P = validate_params(-.3, -.4)


class TestScanGrid(unittest.TestCase):

  def test_pairs_ordered(self):
    pts = ScanGrid().pairs()
    self.assertTrue(np.all(pts[:, 0] - pts[:, 1] >= .02))

  def test_tuples_ordered(self):
    pts = SMALL.tuples(4)
    self.assertEqual(pts.shape[1], 4)
    self.assertTrue(np.all(-np.diff(pts, axis=1) >= SMALL.min_gap))

  def test_refined(self):
    fine = SMALL.refined()
    self.assertEqual(fine.points, 23)
    np.testing.assert_allclose(fine.axis()[::2], SMALL.axis(), rtol=1e-12)

  @parameterized.expand([
    (dict(lo=0.),),
    (dict(lo=2., hi=1.),),
    (dict(points=1),),
    (dict(tuple_points=3),),
  ])
  def test_degenerate(self, kwargs):
    with self.assertRaises(GridError):
      ScanGrid(**kwargs)

  def test_no_tuples(self):
    with self.assertRaises(GridError):
      ScanGrid(min_gap=1.5).tuples(3)


class TestTwoSided(unittest.TestCase):

  @parameterized.expand([(lemma, a, b) for lemma in ("L3_1", "L3_2") for a, b in DEFAULT_PARAMS])
  def test_positive_and_finite(self, lemma, a, b):
    rep = scan_two_sided(validate_params(a, b), lemma)
    self.assertGreater(rep.min_ratio, 0.)
    self.assertTrue(math.isfinite(rep.max_ratio))
    self.assertTrue(math.isfinite(envelope(rep)))
    self.assertEqual(rep.violations, 0)
    self.assertEqual(rep.point_names, ("t", "s"))

  def test_brownian_increment_variance(self):
    rep = scan_two_sided(validate_params(0., -.4), "L3_1")
    self.assertAlmostEqual(rep.min_ratio, 1., places=9)
    self.assertAlmostEqual(rep.max_ratio, 1., places=9)

  def test_one_sided_id(self):
    with self.assertRaises(DomainError):
      scan_two_sided(P, "L3_3")


class TestOneSided(unittest.TestCase):

  @parameterized.expand([(lemma, a, b) for lemma in LEMMA_3_4 for a, b in ((-.3, -.4), (.5, -.3))])
  def test_covariance_estimates(self, lemma, a, b):
    p = validate_params(a, b)
    rep = scan_one_sided(p, lemma)
    self.assertEqual(rep.violations, 0)
    self.assertTrue(math.isfinite(rep.constant))
    # the recorded constant bounds a finer scan of the same region up to a modest factor
    fine = scan_one_sided(p, lemma, ScanGrid().refined())
    self.assertLess(fine.max_ratio, 2. * rep.constant)

  def test_recorded_constant(self):
    rep = scan_one_sided(P, "L3_4a", SMALL, constant=1e-6)
    self.assertGreater(rep.violations, 0)
    self.assertEqual(rep.constant, 1e-6)

  def test_increment_variance_corollary(self):
    rep = scan_one_sided(P, "L3_1b")
    self.assertTrue(math.isfinite(rep.constant))
    with self.assertRaises(DomainError):
      scan_one_sided(validate_params(.5, -.3), "L3_1b")

  def test_cross_increment(self):
    rep = scan_one_sided(P, "L3_3", SMALL, alpha=.5)
    self.assertEqual(rep.point_names, ("t", "s", "t2", "s2"))
    self.assertIn("binding", rep.notes)
    self.assertTrue(math.isfinite(rep.constant))
    with self.assertRaises(DomainError):
      scan_one_sided(P, "L3_3", SMALL, alpha=1.5)

  def test_explicit_tuples(self):
    rep = scan_one_sided(P, "L3_4a", tuples=[[1., .5, .2], [2., 1., .1]])
    self.assertEqual(rep.n_points, 2)
    with self.assertRaises(DomainError):
      scan_one_sided(P, "L3_4a", tuples=[[.2, .5, 1.]])

  def test_density_estimates(self):
    rep = scan_one_sided(P, "L3_5", ScanGrid(points=6))
    self.assertTrue(math.isfinite(rep.constant))
    self.assertEqual(rep.violations, 0)
    self.assertIn("bump_wide", rep.notes)

  def test_density_rows(self):
    grid = ScanGrid(points=6)
    rep = scan_one_sided(P, "L3_5", grid)
    n = len(grid.pairs())
    self.assertEqual(rep.n_points, 2 * n * len(BUMPS))
    # first pair against the first bump, evaluated point by point
    s, r, k, est, lhs, rhs, _ = rep.rows[0]
    self.assertEqual((k, est), (0., 1.))
    f = get_family(BUMPS[0])
    nodes, weights = np.polynomial.legendre.leggauss(64)
    lo, hi = f.support
    half = (hi - lo) / 2.
    x = (lo + hi) / 2. + half * nodes
    total = 0.
    for xi, wi in zip(x, weights):
      for yj, wj in zip(x, weights):
        dens = bivariate_density(xi, yj, s ** P.order, r ** P.order, covariance(P, s, r))
        total += wi * wj * half ** 2 * float(f.fprime(np.array([xi]))[0] * f.fprime(np.array([yj]))[0]) * dens
    self.assertAlmostEqual(lhs, total, delta=1e-10 * max(1., abs(total)))
    # estimate 2 of the last pair against the last bump
    self.assertEqual(rep.rows[-1][2:4], (float(len(BUMPS) - 1), 2.))

  def test_scan_runtime(self):
    start = time.monotonic()
    scan(P, "all")
    self.assertLess(time.monotonic() - start, 30.)

  @parameterized.expand(DEFAULT_PARAMS)
  def test_excess(self, a, b):
    rep = scan_one_sided(validate_params(a, b), "H6_6", SMALL)
    self.assertTrue(math.isfinite(rep.constant))
    self.assertEqual(rep.n_points, SMALL.points ** 2)
    if a == 0.:
      self.assertLess(rep.max_ratio, 1e-9)


class TestDispatch(unittest.TestCase):

  def test_all(self):
    reps = scan(P, "all", ScanGrid(points=6, tuple_points=6))
    self.assertEqual([r.lemma_id for r in reps], list(LEMMAS))
    reps = scan(validate_params(.5, -.3), "all", ScanGrid(points=6, tuple_points=6))
    self.assertNotIn("L3_1b", [r.lemma_id for r in reps])

  def test_group(self):
    self.assertEqual([r.lemma_id for r in scan(P, "L3_4", SMALL)], list(LEMMA_3_4))

  def test_unknown(self):
    with self.assertRaises(DomainError):
      scan(P, "L9_9")

  def test_csv(self):
    reps = scan(P, "L3_1", SMALL) + scan(P, "L3_3", SMALL)
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, "scan.csv")
      write_scan_csv(reps, path, "# test")
      with open(path) as f:
        lines = f.read().splitlines()
    self.assertEqual(lines[1], "lemma,x1,x2,x3,x4,x5,lhs,rhs,ratio")
    self.assertEqual(len(lines), 2 + sum(r.n_points for r in reps) + len(reps))
    self.assertTrue(lines[2].startswith("L3_1,"))
    self.assertIn("summary lemma=L3_3", lines[-1])

  def test_message(self):
    rep = scan(P, "L3_2", SMALL)[0]
    msg = rep.to_message(P)
    self.assertEqual(msg.lemma, "L3_2")
    self.assertEqual(msg.nPoints, rep.n_points)
    self.assertAlmostEqual(msg.params.b, -.4)


if __name__ == "__main__":
  unittest.main()
