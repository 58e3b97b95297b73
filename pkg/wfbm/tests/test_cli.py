#!/usr/bin/env python3
import contextlib
import io
import os
import tempfile
import unittest
from parameterized import parameterized

from wfbm import schema
from wfbm.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from wfbm.output import read_metadata

SMALL = ["--step", "1/128", "--n", "40", "--seed", "7"]


def run(*argv):
  err = io.StringIO()
  with contextlib.redirect_stderr(err):
    code = main(list(argv))
  return code, err.getvalue()


def read(path):
  with open(path) as f:
    return f.read()


class TestCli(unittest.TestCase):

  def setUp(self):
    self.tmp = tempfile.TemporaryDirectory()
    self.out = self.tmp.name

  def tearDown(self):
    self.tmp.cleanup()

  def test_sample(self):
    code, _ = run("sample", "--a", "-0.3", "--b", "-0.4", "--n", "5", "--seed", "7", "--step", "1/64", "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    first = read(os.path.join(self.out, "paths.csv"))
    lines = first.splitlines()
    self.assertTrue(lines[0].startswith("# wfbm "))
    self.assertTrue(lines[0].endswith(" seed=7"))
    self.assertEqual(lines[1], "path_id,t,value")
    self.assertEqual(len(lines), 2 + 5 * 64)

    meta = read_metadata(os.path.join(self.out, "paths.meta.bin"))
    self.assertEqual(meta.nPaths, 5)
    record = read_metadata(os.path.join(self.out, "sample.meta.bin"), schema.RunRecord)
    self.assertEqual(record.ensemble.seed, 7)
    self.assertEqual(len(record.configHash), 64)

    run("sample", "--a", "-0.3", "--b", "-0.4", "--n", "5", "--seed", "7", "--step", "1/64", "--out", self.out)
    self.assertEqual(read(os.path.join(self.out, "paths.csv")), first)

  def test_out_of_region(self):
    code, err = run("sample", "--a", "-0.5", "--b", "0.6", "--out", self.out)
    self.assertEqual(code, EXIT_CONFIG)
    self.assertIn("|b| < 1 + a", err)

  @parameterized.expand([
    (["--config", "/nonexistent/wfbm.cfg"],),
    (["--n", "zero"],),
    (["--step", "1/100000"],),
  ])
  def test_config_errors(self, flags):
    code, _ = run("sample", *flags, "--out", self.out)
    self.assertEqual(code, EXIT_CONFIG)

  def test_config_file(self):
    path = os.path.join(self.out, "run.cfg")
    with open(path, "w") as f:
      f.write("params.a = 0\nparams.b = 0\nmc.n_paths = 3\ngrid.step = 0.0625\n")
    code, _ = run("sample", "--config", path, "--n", "2", "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    self.assertEqual(len(read(os.path.join(self.out, "paths.csv")).splitlines()), 2 + 2 * 16)

  def test_qcov(self):
    code, _ = run("qcov", "--f", "cube", *SMALL, "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    summary = read(os.path.join(self.out, "qcov_summary.csv")).splitlines()
    self.assertEqual(summary[1], "f,epsilon,t,mean,stderr,expected")
    # three eps times five evaluation times
    self.assertEqual(len(summary), 2 + 15)
    self.assertTrue(os.path.exists(os.path.join(self.out, "qcov.csv")))

  def test_local_time(self):
    code, _ = run("local-time", *SMALL, "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    self.assertEqual(read(os.path.join(self.out, "local_time.csv")).splitlines()[1], "x,t,raw,weighted")

  def test_verify(self):
    code, _ = run("verify", "--identity", "tanaka", *SMALL, "--out", self.out)
    self.assertIn(code, (EXIT_OK, EXIT_FAIL))
    lines = read(os.path.join(self.out, "verify.csv")).splitlines()
    self.assertEqual(lines[1], "identity,a,b,t,epsilon,n_paths,mc_mean,mc_stderr,target,z,rel_err,verdict")
    self.assertEqual(len(lines), 3)
    record = read_metadata(os.path.join(self.out, "verify.meta.bin"), schema.RunRecord)
    self.assertEqual(len(record.reports), 1)
    self.assertEqual(record.reports[0].identity, "tanaka")
    self.assertEqual(code == EXIT_OK, record.reports[0].passed)

  def test_verify_skipped(self):
    code, _ = run("verify", "--identity", "hnorm", "--a", "0", "--b", "0", *SMALL, "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    self.assertEqual(len(read(os.path.join(self.out, "verify.csv")).splitlines()), 2)

  def test_verify_thread_independent(self):
    outs = [os.path.join(self.out, str(k)) for k in (1, 3)]
    for k, out in zip((1, 3), outs):
      run("verify", "--identity", "tanaka-positive", *SMALL, "--threads", str(k), "--out", out)
    self.assertEqual(read(os.path.join(outs[0], "verify.csv")), read(os.path.join(outs[1], "verify.csv")))

  def test_unknown_identity(self):
    with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit) as ctx:
      main(["verify", "--identity", "girsanov"])
    self.assertEqual(ctx.exception.code, 2)

  def test_scan(self):
    code, _ = run("scan", "--lemma", "L3_1", "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    lines = read(os.path.join(self.out, "scan.csv")).splitlines()
    self.assertEqual(lines[1], "lemma,x1,x2,x3,x4,x5,lhs,rhs,ratio")
    record = read_metadata(os.path.join(self.out, "scan.meta.bin"), schema.RunRecord)
    self.assertEqual(record.scans[0].lemma, "L3_1")

  def test_unknown_lemma(self):
    code, _ = run("scan", "--lemma", "L9_9", "--out", self.out)
    self.assertEqual(code, EXIT_CONFIG)

  def test_hnorm(self):
    code, _ = run("hnorm", "--f", "constant", "--f", "bump", *SMALL, "--out", self.out)
    self.assertIn(code, (EXIT_OK, EXIT_FAIL))
    lines = read(os.path.join(self.out, "hnorm.csv")).splitlines()
    self.assertEqual(lines[1], "f,T,h_norm")
    self.assertEqual(len(lines), 4)
    self.assertTrue(os.path.exists(os.path.join(self.out, "hnorm_ratios.csv")))

  def test_plot_script(self):
    code, _ = run("scan", "--lemma", "L3_2", "--emit-plot-script", "--out", self.out)
    self.assertEqual(code, EXIT_OK)
    script = read(os.path.join(self.out, "plot_scan.py"))
    self.assertIn(os.path.abspath(os.path.join(self.out, "scan.csv")), script)
    compile(script, "plot_scan.py", "exec")


if __name__ == "__main__":
  unittest.main()
