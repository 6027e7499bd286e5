"""Acceptance criteria 1-8, one PASS/FAIL line each.

The epidemic criteria share one cached set of 10k-agent runs. Every sweep
uses the same base seed, so all points are paired on restart seeds.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from dpfn import harness
from dpfn.baselines import GibbsConfig, GibbsInputs, gibbs_marginals
from dpfn.fn import DailyMessageBundle, fn_belief_f2, fn_covidscore_f1, fn_covidscore_f2
from dpfn.model import ContactDataset, ModelParams, ObservationDataset, ObservationModel
from dpfn.privacy import (NoisePlan, PrivacyBudget, empirical_privacy_violation,
                          lognormal_mechanism, lognormal_renyi_divergence, optimal_rdp_order,
                          rdp_order_line_search, worst_case_log_means)

import oracles

P = ModelParams()
OBS = ObservationModel()
LINES = []


def record(n, ok, detail):
  line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
  LINES.append(line)
  print(line)
  assert ok, line


# criteria 1-5: accounting, inference and mechanism


def test_criterion_1_rdp_order():
  rng = np.random.default_rng(1)
  start = time.perf_counter()
  worst = 0.0
  for _ in range(100):
    budget = PrivacyBudget(float(10**rng.uniform(-2, 1.5)), float(10**rng.uniform(-9, -1)))
    closed = optimal_rdp_order(budget).noise_objective
    search = rdp_order_line_search(budget).noise_objective
    worst = max(worst, abs(closed - search) / search)
  a = optimal_rdp_order(PrivacyBudget(1.0, 1e-3)).a
  elapsed = time.perf_counter() - start
  record(1, worst <= 1e-4 and abs(a - 15.2986) <= 1e-3 and elapsed < 1.0,
         f"max rel gap a/rho {worst:.2e}, a(1,1e-3)={a:.6f}, {elapsed:.2f}s")


def test_criterion_2_divergence_tightness():
  plan = NoisePlan.for_budget(PrivacyBudget(1.0, 1e-3), P.p1)
  rho = plan.point.rho
  tight = 0.0
  for C in (1, 2, 5, 20):
    mu_u, mu_v = worst_case_log_means(C, plan)
    s2 = plan.sigma2_product(C)
    tight = max(tight, abs(lognormal_renyi_divergence(mu_u, mu_v, s2, s2, plan.point.a) - rho))
  rng = np.random.default_rng(2)
  worst = -math.inf
  for _ in range(1000):
    C = int(rng.integers(1, 40))
    phis = rng.uniform(0, 1, C)
    other = phis.copy()
    other[rng.integers(C)] = rng.uniform()
    s2 = plan.sigma2_product(C)
    mu_u = np.sum(np.log1p(-P.p1 * phis)) - s2 / 2
    mu_v = np.sum(np.log1p(-P.p1 * other)) - s2 / 2
    worst = max(worst, lognormal_renyi_divergence(mu_u, mu_v, s2, s2, plan.point.a))
  record(2, tight <= 1e-9 and worst <= rho + 1e-12,
         f"|D - rho| worst case {tight:.1e}, max random D {worst:.4f} <= rho {rho:.4f}")


def test_criterion_3_fn_exactness():
  rng = np.random.default_rng(3)
  start = time.perf_counter()
  exact_gap = 0.0
  for _ in range(100):
    T = int(rng.integers(2, 7))
    obs = [(int(rng.integers(T)), int(rng.integers(2))) for _ in range(rng.integers(0, 4))]
    scores = [rng.uniform(0, 1, rng.integers(0, 6)) for _ in range(T)]
    bundle = DailyMessageBundle.from_scores(scores, P.p1)
    marg = fn_belief_f2(bundle, obs, P, OBS).marginals
    surv = list((1 - P.p0) * bundle.products[:T - 1])
    ref = oracles.exhaustive_marginals(surv, P.p0, P.g, P.h, obs, OBS.alpha, OBS.beta)
    exact_gap = max(exact_gap, float(np.abs(marg - ref).max()))
  f_gap = 0.0
  for _ in range(1000):
    T = int(rng.integers(2, 15))
    scores = [rng.uniform(0, 1, rng.integers(1, 10)) for _ in range(T)]
    bundle = DailyMessageBundle.from_scores(scores, P.p1)
    obs = [(int(rng.integers(T)), int(rng.integers(2))) for _ in range(rng.integers(0, 4))]
    f_gap = max(f_gap, abs(fn_covidscore_f1(bundle, obs, P, OBS)
                           - fn_covidscore_f2(bundle, obs, P, OBS)))
  elapsed = time.perf_counter() - start
  record(3, exact_gap <= 1e-10 and f_gap <= 1e-12 and elapsed < 30,
         f"vs 4^T enumeration {exact_gap:.1e}, F1 vs F2 {f_gap:.1e}, {elapsed:.1f}s")


def test_criterion_4_gibbs_single_user():
  T = 5
  obs = [(2, 1), (4, 0)]
  inputs = GibbsInputs.from_window(1, ContactDataset.empty(),
                                   ObservationDataset.from_tuples([(0, d, o) for d, o in obs]),
                                   0, T)
  cfg = GibbsConfig(clip_B=math.inf, n_samples=100_000, skip=1, burn_in=100)
  marg = gibbs_marginals(inputs, P, OBS, cfg, np.random.default_rng(4), clip_b=math.inf)[0]
  exact = oracles.exhaustive_marginals([1 - P.p0] * (T - 1), P.p0, P.g, P.h, obs, OBS.alpha,
                                       OBS.beta)
  tv = float(np.max(0.5 * np.abs(marg - exact).sum(axis=1)))
  record(4, tv <= 0.02, f"max daily TV {tv:.4f} over 1e5 samples")


def test_criterion_5_mechanism_distribution():
  rng = np.random.default_rng(5)
  plan = NoisePlan.for_budget(PrivacyBudget(1.0, 1e-3), P.p1)
  C, m = 4, 0.97**4
  x = lognormal_mechanism(m, C, plan, rng, size=1_000_000, clip=False)
  se = x.std() / math.sqrt(x.size)
  unbiased = abs(x.mean() - m) < 3 * se
  logs = np.log(x)
  s2 = plan.sigma2_product(C)
  ks = stats.kstest(logs, "norm", args=(math.log(m) - s2 / 2, math.sqrt(s2))).pvalue
  n = 1_000_000
  viol = empirical_privacy_violation(C, plan, 1.0, n, rng)
  bound = 1e-3 + 3 * math.sqrt(1e-3 / n)
  record(5, unbiased and ks > 1e-3 and viol <= bound,
         f"mean gap {abs(x.mean() - m) / se:.2f} SE, KS p={ks:.3f}, "
         f"P[loss > eps]={viol:.2e} <= {bound:.2e}")


# criteria 6-8: epidemic sweeps


class Runs:
  """Lazily runs and caches 10k-agent sweep points, keyed by their settings."""

  def __init__(self, root):
    self.root = root
    self.cache = {}

  def pir(self, method, epsilon=1.0, test_fraction=0.10, fpr_fnr=(0.01, 0.001), loss=0.0):
    key = (method, epsilon, test_fraction, tuple(fpr_fnr), loss)
    if key not in self.cache:
      cfg = harness.ExperimentConfig.from_dict({
          "method": [method], "epsilon": ["inf" if math.isinf(epsilon) else epsilon],
          "test_fraction": [test_fraction], "fpr_fnr": [list(fpr_fnr)],
          "loss_to_followup": [loss], "n_agents": [10_000], "restarts": 10, "seed": 0,
          "horizon_days": 100})
      out = os.path.join(self.root, f"run{len(self.cache):02d}")
      start = time.perf_counter()
      doc = harness.run_sweep(cfg, out)
      point = doc["points"][0]
      self.cache[key] = (point["pir_median"], point["pir"], time.perf_counter() - start)
    return self.cache[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
  return Runs(str(tmp_path_factory.mktemp("acceptance")))


@pytest.mark.slow
def test_criterion_6_epidemic(runs):
  none, _, t_none = runs.pir("none")
  trad, _, t_trad = runs.pir("traditional")
  dpfn, _, t_dpfn = runs.pir("dpfn")
  fn, _, t_fn = runs.pir("fn_noiseless")
  elapsed = t_none + t_trad + t_dpfn + t_fn
  a, b, c = none > 0.05, dpfn < 0.5 * trad, fn <= dpfn
  record(6, a and b and c and elapsed < 600,
         f"median PIR none {none:.4f} (a {a}), traditional {trad:.4f}, dpfn {dpfn:.4f} "
         f"(b {b}), fn {fn:.4f} (c {c}), {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_7_trends(runs):
  eps_grid = (0.1, 1.0, 10.0, math.inf)
  by_eps = [runs.pir("dpfn", epsilon=e)[0] for e in eps_grid]
  eps_ok = all(x >= y for x, y in zip(by_eps, by_eps[1:]))
  base = runs.pir("dpfn")[0]
  noisy = runs.pir("dpfn", fpr_fnr=(0.25, 0.03))[0]
  noisy_plus = runs.pir("dpfn", fpr_fnr=(0.25, 0.03), test_fraction=0.15)[0]
  tests_ok = noisy > base and noisy_plus * 2 <= noisy
  loss_grid = (0.0, 0.25, 0.5, 1.0)
  by_loss = [runs.pir("dpfn", loss=x)[0] for x in loss_grid]
  loss_ok = all(x <= y for x, y in zip(by_loss, by_loss[1:]))
  fmt = lambda xs: "[" + ", ".join(f"{x:.4f}" for x in xs) + "]"
  record(7, eps_ok and tests_ok and loss_ok,
         f"eps {fmt(by_eps)} ({eps_ok}); noisy tests {base:.4f} -> {noisy:.4f} -> "
         f"{noisy_plus:.4f} at 15% ({tests_ok}); loss {fmt(by_loss)} ({loss_ok})")


def test_criterion_8_determinism(tmp_path):
  cfg = harness.ExperimentConfig.from_dict({
      "method": ["dpfn", "traditional"], "epsilon": [1.0], "n_agents": [1000],
      "restarts": 2, "horizon_days": 20, "seed": 8})
  harness.run_sweep(cfg, str(tmp_path / "one"), threads=1)
  harness.run_sweep(cfg, str(tmp_path / "three"), threads=3)
  a = (tmp_path / "one" / "runs.csv").read_bytes()
  b = (tmp_path / "three" / "runs.csv").read_bytes()
  record(8, a == b, f"runs.csv with 1 vs 3 workers identical ({len(a)} bytes)")
