"""Network SEIR simulator with layered contacts, testing and isolation.

Agents belong to one household and optionally to one work/school group.
Each day households mix fully, group members meet with a fixed
probability, and a fresh set of random community pairs is drawn. Ground
truth disease dynamics follow the same noisy-OR SEIR chain as the
inference model, with separately configurable parameters.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dpfn import rng as rngs
from dpfn.errors import ConfigurationError
from dpfn.model import ContactDataset, HealthState, ModelParams, ObservationDataset, ObservationModel

S, E, I, R = (int(s) for s in HealthState)
# States in which a test can come back positive.
TEST_POSITIVE_STATES = (E, I)


@dataclass(frozen=True)
class PopulationConfig:
  """Layer structure of the synthetic population.

  ``household_size_probs[k]`` is the probability of a household of size
  ``k + 1``. A share ``group_share`` of agents is partitioned into groups
  with sizes uniform in ``group_size_range``; two members of a group meet
  on a given day with probability ``group_contact_prob``.
  """

  n_agents: int = 10_000
  household_size_probs: tuple = (0.28, 0.35, 0.15, 0.13, 0.06, 0.03)
  group_share: float = 0.8
  group_size_range: tuple = (10, 30)
  group_contact_prob: float = 0.4
  community_contacts: float = 6.5
  max_contacts: int = 200
  seed: int = 0

  def __post_init__(self):
    if self.n_agents < 100:
      raise ConfigurationError("n_agents must be >= 100")
    probs = np.asarray(self.household_size_probs, dtype=float)
    if probs.ndim != 1 or (probs < 0).any() or not np.isclose(probs.sum(), 1.0):
      raise ConfigurationError("household_size_probs must be a probability vector")
    lo, hi = self.group_size_range
    if not 2 <= lo <= hi:
      raise ConfigurationError(f"infeasible group sizes {self.group_size_range}")
    if self.group_share > 0 and lo > self.n_agents * self.group_share:
      raise ConfigurationError("group share too small for the minimum group size")
    for name in ("group_share", "group_contact_prob"):
      if not 0.0 <= getattr(self, name) <= 1.0:
        raise ConfigurationError(f"{name} must be in [0, 1]")
    if self.community_contacts < 0 or self.max_contacts < 1:
      raise ConfigurationError("community_contacts >= 0 and max_contacts >= 1 required")


@dataclass(frozen=True)
class SimConfig:
  """Run settings. The ``*_sim`` fields drive the ground-truth dynamics."""

  horizon_days: int = 100
  n_seed_infections: int = 25
  intervention_start_day: int = 3
  test_fraction: float = 0.10
  fpr: float = 0.01
  fnr: float = 0.001
  isolation_days: int = 10
  loss_to_followup: float = 0.0
  p0_sim: float = 0.0
  p1_sim: float = 0.02
  g_sim: float = 0.99
  h_sim: float = 0.1
  window: int = 14

  def __post_init__(self):
    for name in ("test_fraction", "fpr", "fnr", "loss_to_followup", "p0_sim", "p1_sim",
                 "g_sim", "h_sim"):
      if not 0.0 <= getattr(self, name) <= 1.0:
        raise ConfigurationError(f"{name} must be in [0, 1]")
    if self.horizon_days < 1 or self.n_seed_infections < 0 or self.isolation_days < 0:
      raise ConfigurationError("invalid horizon, seed count or isolation length")
    if self.window < 2:
      raise ConfigurationError("window must be >= 2")


@dataclass
class Layers:
  n_agents: int
  household: np.ndarray
  group: np.ndarray
  household_pairs: np.ndarray
  group_pairs: np.ndarray
  group_contact_prob: float
  community_contacts: float
  max_contacts: int

  def household_sizes(self) -> np.ndarray:
    return np.bincount(self.household)


@dataclass
class AgentState:
  """Per-agent arrays; agent ``i`` is quarantined on ``day`` iff ``day < quarantine_until[i]``."""

  health: np.ndarray
  quarantine_until: np.ndarray
  last_test_day: np.ndarray
  last_test_outcome: np.ndarray

  @classmethod
  def initial(cls, n: int) -> "AgentState":
    return cls(np.full(n, S, dtype=np.int8), np.zeros(n, dtype=np.int64),
               np.full(n, -1, dtype=np.int64), np.full(n, -1, dtype=np.int8))

  def quarantined(self, day: int) -> np.ndarray:
    return self.quarantine_until > day


@dataclass
class DayRecord:
  day: int
  n_S: int
  n_E: int
  n_I: int
  n_R: int
  n_quarantined: int
  n_tested: int
  n_true_positive_tests: int
  recall: float
  avg_precision: float

  @property
  def n_agents(self) -> int:
    return self.n_S + self.n_E + self.n_I + self.n_R


def _all_pairs(members: np.ndarray) -> np.ndarray:
  i, j = np.triu_indices(len(members), k=1)
  return np.stack([members[i], members[j]], axis=1)


def generate_population(cfg: PopulationConfig) -> Layers:
  """Build households and groups; deterministic given ``cfg.seed``."""
  rng = rngs.stream(cfg.seed, "population")
  n = cfg.n_agents
  probs = np.asarray(cfg.household_size_probs, dtype=float)
  sizes = []
  total = 0
  while total < n:
    size = int(rng.choice(len(probs), p=probs)) + 1
    size = min(size, n - total)
    sizes.append(size)
    total += size
  household = np.repeat(np.arange(len(sizes)), sizes)

  group = np.full(n, -1, dtype=np.int64)
  lo, hi = cfg.group_size_range
  members = rng.permutation(n)[:int(round(cfg.group_share * n))]
  start, gid = 0, 0
  while start < len(members):
    size = int(rng.integers(lo, hi + 1))
    if len(members) - start - size < lo:
      size = len(members) - start
    group[members[start:start + size]] = gid
    start += size
    gid += 1

  def pairs_of(labels):
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    chunks = [c for c in np.split(order, bounds) if len(c) > 1 and labels[c[0]] >= 0]
    if not chunks:
      return np.empty((0, 2), dtype=np.int64)
    return np.concatenate([_all_pairs(c) for c in chunks])

  return Layers(n, household, group, pairs_of(household), pairs_of(group),
                cfg.group_contact_prob, cfg.community_contacts, cfg.max_contacts)


def _cap_pairs(pairs: np.ndarray, n: int, cap: int) -> np.ndarray:
  """Drop pairs so that no agent takes part in more than ``cap`` of them."""
  if not len(pairs):
    return pairs
  deg = np.bincount(pairs.ravel(), minlength=n)
  if deg.max() <= cap:
    return pairs
  keep = np.ones(len(pairs), dtype=bool)
  for col in (0, 1):
    ends = pairs[:, col]
    order = np.argsort(ends, kind="stable")
    sorted_ends = ends[order]
    first_pos = np.searchsorted(sorted_ends, sorted_ends, side="left")
    rank = np.empty(len(pairs), dtype=np.int64)
    rank[order] = np.arange(len(pairs)) - first_pos
    keep &= rank < cap // 2
  return pairs[keep]


def daily_contacts(layers: Layers, day: int, quarantined: np.ndarray,
                   rng: np.random.Generator) -> ContactDataset:
  """Contacts of one day in both directions, excluding quarantined agents.

  Random draws do not depend on who is quarantined, so paired runs see the
  same candidate encounters.
  """
  n = layers.n_agents
  group_mask = rng.random(len(layers.group_pairs)) < layers.group_contact_prob
  m = int(rng.poisson(n * layers.community_contacts / 2.0))
  a = rng.integers(0, n, m)
  b = rng.integers(0, n - 1, m)
  b = b + (b >= a)
  pairs = np.concatenate([layers.household_pairs, layers.group_pairs[group_mask],
                          np.stack([a, b], axis=1)])
  pairs = pairs[~(quarantined[pairs[:, 0]] | quarantined[pairs[:, 1]])]
  pairs = _cap_pairs(pairs, n, layers.max_contacts)
  u = np.concatenate([pairs[:, 0], pairs[:, 1]])
  v = np.concatenate([pairs[:, 1], pairs[:, 0]])
  return ContactDataset(u, v, np.full(len(u), day))


def step_disease(states: np.ndarray, contacts: ContactDataset, sim: SimConfig,
                 rng: np.random.Generator) -> np.ndarray:
  """Advance every agent one day using one uniform draw per agent."""
  n = len(states)
  draw = rng.random(n)
  infectious_src = states[contacts.v] == I
  k = np.bincount(contacts.u[infectious_src], minlength=n)
  survival = (1.0 - sim.p0_sim) * (1.0 - sim.p1_sim)**k
  new = states.copy()
  new[(states == S) & (draw >= survival)] = E
  new[(states == E) & (draw < sim.g_sim)] = I
  new[(states == I) & (draw < sim.h_sim)] = R
  return new


def rank_for_testing(scores: np.ndarray) -> np.ndarray:
  """Agent ids by descending score, ties by ascending id."""
  return np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=float)))


def run_test_protocol(scores: np.ndarray, sim: SimConfig, agents: AgentState, day: int,
                      rng: np.random.Generator):
  """Test the top-scoring agents that are not in quarantine.

  Positive agents isolate for ``sim.isolation_days`` starting tomorrow,
  unless their loss-to-follow-up draw voids the request. ``agents`` is
  updated in place.

  Returns:
    ``(observations, n_true_positives)`` for this day.
  """
  n = len(scores)
  draw_test = rng.random(n)
  draw_loss = rng.random(n)
  budget = int(round(sim.test_fraction * n))
  eligible = ~agents.quarantined(day)
  order = rank_for_testing(scores)
  tested = order[eligible[order]][:budget]
  infected = np.isin(agents.health[tested], TEST_POSITIVE_STATES)
  p_pos = np.where(infected, 1.0 - sim.fnr, sim.fpr)
  outcome = (draw_test[tested] < p_pos).astype(np.int64)
  isolate = tested[(outcome == 1) & (draw_loss[tested] >= sim.loss_to_followup)]
  agents.quarantine_until[isolate] = day + 1 + sim.isolation_days
  agents.last_test_day[tested] = day
  agents.last_test_outcome[tested] = outcome
  n_tp = int(np.sum((outcome == 1) & infected))
  return ObservationDataset(tested, np.full(len(tested), day), outcome), n_tp


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
  """Step-wise average precision of the ranking by ``rank_for_testing``."""
  labels = np.asarray(labels, dtype=bool)
  npos = int(labels.sum())
  if npos == 0:
    return float("nan")
  rel = labels[rank_for_testing(scores)]
  precision = np.cumsum(rel) / np.arange(1, len(rel) + 1)
  return float(precision[rel].sum() / npos)


def recall(agents: AgentState, day: int) -> float:
  """Share of infectious agents that are in quarantine."""
  inf = agents.health == I
  if not inf.any():
    return float("nan")
  return float(np.mean(agents.quarantined(day)[inf]))


METHODS = ("dpfn", "fn_noiseless", "traditional", "per_message", "gibbs", "none")


def run_simulation(sim: SimConfig, layers: Layers, method: str, budget, master_seed: int,
                   params: Optional[ModelParams] = None,
                   **method_kwargs) -> list:
  """Simulate ``sim.horizon_days`` days with the given tracing method.

  Each day: draw contacts, score every agent, test from
  ``sim.intervention_start_day`` on, record metrics, then advance the
  disease. Inference assumes the simulator's test error rates are known.
  Fully determined by ``master_seed``.

  Returns:
    List of ``DayRecord``.
  """
  from dpfn.tracing import make_tracer

  params = ModelParams() if params is None else params
  obs_model = ObservationModel(alpha=sim.fnr, beta=sim.fpr)
  n = layers.n_agents
  tracer = make_tracer(method, n, sim, params, obs_model, budget, master_seed,
                       **method_kwargs)

  agents = AgentState.initial(n)
  seeds = rngs.stream(master_seed, "seeding").choice(n, size=min(sim.n_seed_infections, n),
                                                     replace=False)
  agents.health[seeds] = I

  # Contacts older than window - 1 days no longer enter any transition.
  contact_hist = collections.deque(maxlen=sim.window - 1)
  obs_hist = collections.deque(maxlen=sim.window)
  records = []
  for day in range(sim.horizon_days):
    quarantined = agents.quarantined(day)
    today = daily_contacts(layers, day, quarantined, rngs.stream(master_seed, "contacts", day))
    scores = tracer.scores(day, ContactDataset.concat(contact_hist),
                           ObservationDataset.concat(obs_hist))
    n_tested = n_tp = 0
    if tracer.tests and day >= sim.intervention_start_day:
      obs_today, n_tp = run_test_protocol(scores, sim, agents, day,
                                          rngs.stream(master_seed, "tests", day))
      obs_hist.append(obs_today)
      n_tested = len(obs_today)
    counts = np.bincount(agents.health, minlength=4)
    records.append(DayRecord(
        day=day, n_S=int(counts[S]), n_E=int(counts[E]), n_I=int(counts[I]),
        n_R=int(counts[R]), n_quarantined=int(agents.quarantined(day).sum()),
        n_tested=n_tested, n_true_positive_tests=n_tp, recall=recall(agents, day),
        avg_precision=average_precision(scores, agents.health == I)))
    contact_hist.append(today)
    agents.health = step_disease(agents.health, today, sim,
                                 rngs.stream(master_seed, "disease", day))
  return records


def peak_infectious_fraction(records) -> float:
  return max(r.n_I for r in records) / records[0].n_agents
