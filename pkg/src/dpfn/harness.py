"""Experiment sweeps: configuration, run pool, aggregation and persistence.

A sweep is the Cartesian product of its list-valued axes. Every point is
run for ``restarts`` restarts; restart ``r`` uses the master seed
``derive_seed(seed, r)`` at every point, so points are paired and a point's
output never depends on which other points are in the sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dpfn import __version__, baselines
from dpfn.errors import ConfigurationError
from dpfn.model import ModelParams
from dpfn.privacy import NoisePlan, PrivacyBudget
from dpfn.rng import derive_seed
from dpfn.simulator import (METHODS, TEST_POSITIVE_STATES, PopulationConfig, SimConfig,
                            generate_population, run_simulation)

CSV_COLUMNS = ("run_id", "method", "epsilon", "delta", "seed", "day", "n_S", "n_E", "n_I",
               "n_R", "n_quarantined", "n_tested", "recall", "avg_precision")
HIGHLIGHT_DAYS = 30
PRIVACY_FORMULAS = {
    "rdp_order": "a = 1 + (d + sqrt(d (d + eps))) / eps, d = log(1/delta)",
    "rdp_rho": "rho = eps - d / (a - 1)",
    "dpfn_sigma2_per_message": "sigma2 = a / (2 C rho) * (log(1 - gamma_u p1) - log(1 - gamma_l p1))^2",
    "dpfn_mechanism": "log-normal with mu = log(product) - C sigma2 / 2, clipped to "
                      "[(1 - gamma_u p1)^C, (1 - gamma_l p1)^C]; days with C = 0 unchanged",
    "gaussian_sigma": "sigma = sensitivity * sqrt(2 log(1.25 / delta)) / eps",
    "traditional_sensitivity": "1 (count of positive contacts)",
    "per_message_sensitivity": "2 |logit(gamma)|, gamma = 0.01",
    "gibbs": baselines.GIBBS_ACCOUNTING,
}


def _format_float(x) -> str:
  x = float(x)
  if math.isinf(x):
    return "inf" if x > 0 else "-inf"
  return repr(x)


def _parse_epsilon(x) -> float:
  if isinstance(x, str):
    if x.strip().lower() == "inf":
      return math.inf
    raise ConfigurationError(f"epsilon must be a number or 'inf', got {x!r}")
  if isinstance(x, bool) or not isinstance(x, (int, float)):
    raise ConfigurationError(f"epsilon must be a number or 'inf', got {x!r}")
  return float(x)


@dataclass
class ExperimentConfig:
  """Sweep definition; JSON keys mirror these field names exactly."""

  method: list = field(default_factory=lambda: ["dpfn"])
  epsilon: list = field(default_factory=lambda: [1.0])
  delta: float = 1e-3
  test_fraction: list = field(default_factory=lambda: [0.10])
  fpr_fnr: list = field(default_factory=lambda: [[0.01, 0.001]])
  n_agents: list = field(default_factory=lambda: [10_000])
  loss_to_followup: list = field(default_factory=lambda: [0.0])
  window: int = 14
  restarts: int = 10
  seed: int = 0
  horizon_days: int = 100
  n_seed_infections: int = 25
  intervention_start_day: int = 3
  isolation_days: int = 10
  p1_sim: float = 0.02
  g_sim: float = 0.99
  h_sim: float = 0.10

  def __post_init__(self):
    for name in ("method", "epsilon", "test_fraction", "fpr_fnr", "n_agents",
                 "loss_to_followup"):
      value = getattr(self, name)
      if not isinstance(value, list) or not value:
        raise ConfigurationError(f"{name} must be a non-empty list")
    for m in self.method:
      if m not in METHODS:
        raise ConfigurationError(f"unknown method {m!r}; choose from {list(METHODS)}")
    self.epsilon = [_parse_epsilon(e) for e in self.epsilon]
    for e in self.epsilon:
      PrivacyBudget(e, self.delta)
    for pair in self.fpr_fnr:
      if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
        raise ConfigurationError(f"fpr_fnr entries must be [fpr, fnr], got {pair!r}")
    self.fpr_fnr = [[float(a), float(b)] for a, b in self.fpr_fnr]
    if self.restarts < 1:
      raise ConfigurationError("restarts must be >= 1")
    # Validate every derived simulator config before anything runs.
    for point in self.points():
      point.sim_config()
      point.population_config(0)

  @classmethod
  def from_dict(cls, data: dict) -> "ExperimentConfig":
    if not isinstance(data, dict):
      raise ConfigurationError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
      raise ConfigurationError(f"unknown config keys: {unknown}")
    try:
      return cls(**data)
    except TypeError as exc:
      raise ConfigurationError(str(exc)) from exc

  @classmethod
  def from_json(cls, path: str) -> "ExperimentConfig":
    try:
      with open(path) as fh:
        data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
      raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return cls.from_dict(data)

  def to_dict(self) -> dict:
    out = dataclasses.asdict(self)
    out["epsilon"] = ["inf" if math.isinf(e) else e for e in self.epsilon]
    return out

  def points(self) -> list:
    grid = itertools.product(self.method, self.epsilon, self.test_fraction, self.fpr_fnr,
                             self.n_agents, self.loss_to_followup)
    return [SweepPoint(i, m, e, self.delta, tf, fpr, fnr, n, loss, self)
            for i, (m, e, tf, (fpr, fnr), n, loss) in enumerate(grid)]

  def restart_seeds(self) -> list:
    return [derive_seed(self.seed, r) for r in range(self.restarts)]


@dataclass(frozen=True)
class SweepPoint:
  index: int
  method: str
  epsilon: float
  delta: float
  test_fraction: float
  fpr: float
  fnr: float
  n_agents: int
  loss_to_followup: float
  cfg: ExperimentConfig = dataclasses.field(repr=False, compare=False)

  @property
  def point_id(self) -> str:
    return f"p{self.index:03d}"

  def sim_config(self) -> SimConfig:
    c = self.cfg
    return SimConfig(horizon_days=c.horizon_days, n_seed_infections=c.n_seed_infections,
                     intervention_start_day=c.intervention_start_day,
                     test_fraction=self.test_fraction, fpr=self.fpr, fnr=self.fnr,
                     isolation_days=c.isolation_days, loss_to_followup=self.loss_to_followup,
                     p1_sim=c.p1_sim, g_sim=c.g_sim, h_sim=c.h_sim, window=c.window)

  def population_config(self, master_seed: int) -> PopulationConfig:
    return PopulationConfig(n_agents=int(self.n_agents), seed=derive_seed(master_seed, 1))

  def budget(self) -> PrivacyBudget:
    return PrivacyBudget(self.epsilon, self.delta)

  def describe(self) -> dict:
    return {"point_id": self.point_id, "method": self.method,
            "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
            "delta": self.delta, "test_fraction": self.test_fraction, "fpr": self.fpr,
            "fnr": self.fnr, "n_agents": self.n_agents,
            "loss_to_followup": self.loss_to_followup}


def peak_infection_rate(records) -> float:
  """Largest daily fraction of agents in state I."""
  records = list(records)
  if not records:
    raise ValueError("peak_infection_rate needs at least one record")
  return max(r.n_I / r.n_agents for r in records)


def quantile_aggregate(values: Sequence[float], q: float) -> float:
  """Linear-interpolation quantile; ``q = 0.5`` is the median."""
  values = np.asarray(list(values), dtype=float)
  if values.size == 0:
    raise ValueError("quantile_aggregate needs at least one value")
  if not 0.0 <= q <= 1.0:
    raise ValueError(f"q must be in [0, 1], got {q}")
  return float(np.quantile(values, q, method="linear"))


def _run_one(task):
  """Worker: simulate one (point, restart) and return CSV text and timing."""
  cfg_dict, point_index, restart = task
  cfg = ExperimentConfig.from_dict(cfg_dict)
  point = cfg.points()[point_index]
  master_seed = cfg.restart_seeds()[restart]
  start = time.perf_counter()
  layers = generate_population(point.population_config(master_seed))
  records = run_simulation(point.sim_config(), layers, point.method, point.budget(),
                           master_seed, params=ModelParams())
  run_id = f"{point.point_id}-r{restart:02d}"
  buf = io.StringIO()
  writer = csv.writer(buf, lineterminator="\n")
  eps = _format_float(point.epsilon)
  for r in records:
    writer.writerow([run_id, point.method, eps, _format_float(point.delta), master_seed,
                     r.day, r.n_S, r.n_E, r.n_I, r.n_R, r.n_quarantined, r.n_tested,
                     _format_float(r.recall), _format_float(r.avg_precision)])
  return point_index, restart, buf.getvalue(), time.perf_counter() - start


def _nan_median(column: np.ndarray):
  out = []
  for col in column.T:
    col = col[~np.isnan(col)]
    out.append(float(np.median(col)) if col.size else None)
  return out


def summarize_rows(rows_by_run: dict, points: Optional[list] = None) -> list:
  """Aggregate parsed CSV rows into one summary entry per sweep point.

  ``rows_by_run`` maps run_id to a list of row dicts (strings as read from
  the CSV). This is shared by the writer and ``report`` so both produce the
  same numbers.
  """
  by_point = {}
  for run_id in sorted(rows_by_run):
    by_point.setdefault(run_id.split("-")[0], []).append(run_id)
  described = {p.point_id: p.describe() for p in points} if points else {}
  out = []
  for pid, run_ids in by_point.items():
    pir, recalls, aps, seeds = [], [], [], []
    first = rows_by_run[run_ids[0]][0]
    for rid in run_ids:
      rows = rows_by_run[rid]
      n_i = np.array([int(r["n_I"]) for r in rows], dtype=float)
      n = np.array([int(r["n_S"]) + int(r["n_E"]) + int(r["n_I"]) + int(r["n_R"])
                    for r in rows], dtype=float)
      pir.append(float(np.max(n_i / n)))
      recalls.append([float(r["recall"]) for r in rows])
      aps.append([float(r["avg_precision"]) for r in rows])
      seeds.append(int(rows[0]["seed"]))
    recall_med = _nan_median(np.array(recalls))
    ap_med = _nan_median(np.array(aps))
    entry = dict(described.get(pid, {"point_id": pid, "method": first["method"],
                                      "epsilon": first["epsilon"],
                                      "delta": float(first["delta"])}))
    entry.update({
        "run_ids": run_ids,
        "seeds": seeds,
        "pir": pir,
        "pir_median": quantile_aggregate(pir, 0.5),
        "pir_q20": quantile_aggregate(pir, 0.2),
        "pir_q80": quantile_aggregate(pir, 0.8),
        "recall_median_first30": recall_med[:HIGHLIGHT_DAYS],
        "avg_precision_median_first30": ap_med[:HIGHLIGHT_DAYS],
        "recall_median_by_day": recall_med,
        "avg_precision_median_by_day": ap_med,
    })
    out.append(entry)
  return out


def read_csv(path: str) -> dict:
  rows_by_run = {}
  with open(path, newline="") as fh:
    reader = csv.DictReader(fh)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
      raise ConfigurationError(f"{path} does not have the expected columns")
    for row in reader:
      rows_by_run.setdefault(row["run_id"], []).append(row)
  return rows_by_run


def manifest(cfg: ExperimentConfig) -> dict:
  points = cfg.points()
  return {
      "version": __version__,
      "config": cfg.to_dict(),
      "restart_seeds": cfg.restart_seeds(),
      "points": [p.describe() for p in points],
      "inference_params": dataclasses.asdict(ModelParams()),
      "population_defaults": dataclasses.asdict(PopulationConfig()),
      "population_seed": "derive_seed(restart_seed, 1)",
      "test_positive_states": "E,I" if TEST_POSITIVE_STATES == (1, 2) else str(
          TEST_POSITIVE_STATES),
      "privacy_accounting": PRIVACY_FORMULAS,
      "csv_columns": list(CSV_COLUMNS),
  }


def _json_dump(obj, path):
  with open(path, "w") as fh:
    json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=False)
    fh.write("\n")


def run_sweep(cfg: ExperimentConfig, out_dir: str, threads: int = 1,
              progress=None) -> dict:
  """Run every point and restart, then write ``runs.csv``, ``summary.json``, ``manifest.json``.

  The output is identical for any ``threads``: each run owns its seed and its
  CSV row-group, and files are assembled in (point, restart) order.
  """
  try:
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write_probe")
    with open(probe, "w"):
      pass
    os.remove(probe)
  except OSError as exc:
    raise ConfigurationError(f"output directory {out_dir} is not writable: {exc}") from exc

  points = cfg.points()
  cfg_dict = cfg.to_dict()
  tasks = [(cfg_dict, p.index, r) for p in points for r in range(cfg.restarts)]
  results = {}
  start = time.perf_counter()
  if threads > 1:
    with ProcessPoolExecutor(max_workers=threads) as pool:
      for res in pool.map(_run_one, tasks):
        results[res[:2]] = res
        if progress:
          progress(res)
  else:
    for task in tasks:
      res = _run_one(task)
      results[res[:2]] = res
      if progress:
        progress(res)

  csv_path = os.path.join(out_dir, "runs.csv")
  with open(csv_path, "w", newline="") as fh:
    fh.write(",".join(CSV_COLUMNS) + "\n")
    for key in sorted(results):
      fh.write(results[key][2])

  summary = summarize_rows(read_csv(csv_path), points)
  for entry, p in zip(summary, points):
    entry["wall_clock_s"] = sum(results[(p.index, r)][3] for r in range(cfg.restarts))
  doc = {"points": summary, "total_wall_clock_s": time.perf_counter() - start,
         "highlight_days": HIGHLIGHT_DAYS}
  _json_dump(doc, os.path.join(out_dir, "summary.json"))
  _json_dump(manifest(cfg), os.path.join(out_dir, "manifest.json"))
  return doc


def report(in_dir: str) -> dict:
  """Re-derive the summaries from ``runs.csv`` alone and write ``report.json``."""
  csv_path = os.path.join(in_dir, "runs.csv")
  if not os.path.exists(csv_path):
    raise ConfigurationError(f"no runs.csv in {in_dir}")
  points = None
  man_path = os.path.join(in_dir, "manifest.json")
  if os.path.exists(man_path):
    with open(man_path) as fh:
      points = ExperimentConfig.from_dict(json.load(fh)["config"]).points()
  doc = {"points": summarize_rows(read_csv(csv_path), points),
         "highlight_days": HIGHLIGHT_DAYS}
  _json_dump(doc, os.path.join(in_dir, "report.json"))
  return doc


def score_bands(p1: float = 0.25, epsilon: float = 1.0, delta: float = 1e-3,
                window: int = 14, days_before: Sequence[int] = (5, 3),
                phi_grid: Optional[Sequence[float]] = None, n_samples: int = 2000,
                quantiles: Sequence[float] = (0.05, 0.2, 0.5, 0.8, 0.95),
                seed: int = 0) -> list:
  """Quantiles of the released score for a user with one contact on each of ``days_before``.

  Both contacts send the same score ``phi``; for every ``phi`` on the grid
  the noiseless score and quantiles of ``n_samples`` mechanism draws are
  returned.
  """
  from dpfn.fn import forward_backward, observation_evidence
  from dpfn.model import HealthState, ObservationDataset, ObservationModel
  from dpfn.privacy import lognormal_mechanism_log

  params = ModelParams(p1=p1)
  plan = NoisePlan.for_budget(PrivacyBudget(epsilon, delta), p1)
  grid = np.linspace(0.0, 1.0, 11) if phi_grid is None else np.asarray(phi_grid, dtype=float)
  rng = np.random.Generator(np.random.Philox(seed))
  slots = [window - 1 - d for d in days_before]
  evidence = observation_evidence(ObservationDataset.empty(), n_samples + 1, 0, window,
                                  ObservationModel())
  rows = []
  for phi in grid:
    log_prod = np.zeros((n_samples + 1, window - 1))
    counts = np.zeros_like(log_prod, dtype=np.int64)
    for s in slots:
      log_prod[:, s] += math.log1p(-p1 * phi)
      counts[:, s] += 1
    noisy = log_prod.copy()
    noisy[1:] = lognormal_mechanism_log(log_prod[1:], counts[1:], plan, rng)
    marg = forward_backward(math.log1p(-params.p0) + noisy, evidence, params)
    scores = marg[:, -1, HealthState.I]
    row = {"phi": float(phi), "noiseless": float(scores[0])}
    for q in quantiles:
      row[f"q{int(round(q * 100)):02d}"] = quantile_aggregate(scores[1:], q)
    rows.append(row)
  return rows
