"""SEIR model shared by inference, the baselines and the simulator.

States evolve along S -> E -> I -> R. Survival in S on a day is a noisy-OR
over the infectious contacts of that day; tests report I with a false
negative rate and report S, E or R with a false positive rate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from dpfn.errors import ConfigurationError

NUM_STATES = 4


class HealthState(enum.IntEnum):
  S = 0
  E = 1
  I = 2
  R = 3


def _check_prob(name: str, value: float, upper_open: bool = True) -> None:
  if not (0.0 <= value < 1.0 if upper_open else 0.0 <= value <= 1.0):
    raise ConfigurationError(f"{name}={value!r} is not a valid probability")


@dataclass(frozen=True)
class ModelParams:
  """Scalar parameters of the transition model.

  Attributes:
    p0: daily probability of exposure without any infectious contact.
    p1: per-contact transmission probability.
    g: daily probability of E -> I.
    h: daily probability of I -> R.
  """

  p0: float = 0.001
  p1: float = 0.05
  g: float = 0.99
  h: float = 0.10

  def __post_init__(self):
    for name in ("p0", "p1", "g", "h"):
      _check_prob(name, getattr(self, name), upper_open=(name != "g"))


@dataclass(frozen=True)
class ObservationModel:
  """Test noise: ``alpha`` is the false negative rate, ``beta`` the false positive rate."""

  alpha: float = 0.001
  beta: float = 0.01

  def __post_init__(self):
    _check_prob("alpha", self.alpha)
    _check_prob("beta", self.beta)

  def likelihood_table(self) -> np.ndarray:
    """Array ``L[outcome, state]`` of test outcome probabilities."""
    table = np.empty((2, NUM_STATES))
    table[1, :] = self.beta
    table[0, :] = 1.0 - self.beta
    table[1, HealthState.I] = 1.0 - self.alpha
    table[0, HealthState.I] = self.alpha
    return table


def observation_likelihood(state: HealthState, outcome: int,
                           obs: ObservationModel) -> float:
  """Probability of a test ``outcome`` (0 or 1) given the true ``state``."""
  if state == HealthState.I:
    return 1.0 - obs.alpha if outcome else obs.alpha
  return obs.beta if outcome else 1.0 - obs.beta


def noisy_or_survival(params: ModelParams, infected_contact_count: int) -> float:
  """Probability of staying in S given ``k`` infectious contacts on a day."""
  return (1.0 - params.p0) * (1.0 - params.p1) ** infected_contact_count


def step_distribution(state: HealthState, survival: float,
                      params: ModelParams) -> np.ndarray:
  """Distribution over tomorrow's state, indexed by ``HealthState``.

  ``survival`` is the probability of S -> S and is only used when ``state``
  is S.
  """
  if not 0.0 <= survival <= 1.0:
    raise ValueError(f"survival={survival!r} outside [0, 1]")
  return transition_matrix(survival, params)[int(state)]


def transition_matrix(survival: float, params: ModelParams) -> np.ndarray:
  """Row-stochastic 4x4 transition matrix for one day."""
  mat = np.zeros((NUM_STATES, NUM_STATES))
  mat[0, 0] = survival
  mat[0, 1] = 1.0 - survival
  mat[1, 1] = 1.0 - params.g
  mat[1, 2] = params.g
  mat[2, 2] = 1.0 - params.h
  mat[2, 3] = params.h
  mat[3, 3] = 1.0
  return mat


def window_prior(params: ModelParams) -> np.ndarray:
  """State distribution on the first day of an inference window."""
  return np.array([1.0 - params.p0, params.p0, 0.0, 0.0])


@dataclass
class ContactDataset:
  """Directed contacts: row ``i`` means ``v[i]`` can infect ``u[i]`` on day ``t[i]``."""

  u: np.ndarray
  v: np.ndarray
  t: np.ndarray

  def __post_init__(self):
    # 32-bit ids keep the daily sweep over millions of contacts memory-light.
    self.u = np.asarray(self.u, dtype=np.int32)
    self.v = np.asarray(self.v, dtype=np.int32)
    self.t = np.asarray(self.t, dtype=np.int32)
    if not self.u.shape == self.v.shape == self.t.shape:
      raise ValueError("contact arrays must have equal length")

  def __len__(self):
    return len(self.u)

  @classmethod
  def from_tuples(cls, tuples) -> "ContactDataset":
    arr = np.asarray(list(tuples), dtype=np.int64).reshape(-1, 3)
    return cls(arr[:, 0], arr[:, 1], arr[:, 2])

  @classmethod
  def empty(cls) -> "ContactDataset":
    return cls(np.empty(0), np.empty(0), np.empty(0))

  @classmethod
  def concat(cls, parts) -> "ContactDataset":
    parts = list(parts)
    if not parts:
      return cls.empty()
    return cls(np.concatenate([p.u for p in parts]),
               np.concatenate([p.v for p in parts]),
               np.concatenate([p.t for p in parts]))


@dataclass
class ObservationDataset:
  """Test results: user ``u[i]`` tested on day ``t[i]`` with outcome ``o[i]``."""

  u: np.ndarray
  t: np.ndarray
  o: np.ndarray

  def __post_init__(self):
    self.u = np.asarray(self.u, dtype=np.int64)
    self.t = np.asarray(self.t, dtype=np.int64)
    self.o = np.asarray(self.o, dtype=np.int64)
    if not self.u.shape == self.t.shape == self.o.shape:
      raise ValueError("observation arrays must have equal length")
    if self.o.size and not np.isin(self.o, (0, 1)).all():
      raise ValueError("test outcomes must be 0 or 1")

  def __len__(self):
    return len(self.u)

  @classmethod
  def from_tuples(cls, tuples) -> "ObservationDataset":
    arr = np.asarray(list(tuples), dtype=np.int64).reshape(-1, 3)
    return cls(arr[:, 0], arr[:, 1], arr[:, 2])

  @classmethod
  def empty(cls) -> "ObservationDataset":
    return cls(np.empty(0), np.empty(0), np.empty(0))

  @classmethod
  def concat(cls, parts) -> "ObservationDataset":
    parts = list(parts)
    if not parts:
      return cls.empty()
    return cls(np.concatenate([p.u for p in parts]),
               np.concatenate([p.t for p in parts]),
               np.concatenate([p.o for p in parts]))

  def for_user(self, user: int):
    """List of ``(day, outcome)`` pairs for one user."""
    mask = self.u == user
    return list(zip(self.t[mask].tolist(), self.o[mask].tolist()))
