"""Factorized Neighbors inference over a fixed window of days.

A user's posterior is computed against point summaries (messages) of the
neighbors. Because only the product of a day's messages enters the S -> S
transition, the single-user posterior is a sum over monotone traces whose
weights depend on the daily products alone.

Two code paths compute the same marginals:

* ``fn_belief_f2`` / ``fn_covidscore_f2`` enumerate traces explicitly. This
  is the reference path for a single user.
* ``fn_sweep`` runs a vectorized forward-backward pass over the whole
  population, which is what the simulator uses every day.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from dpfn import _fn_kernel
from dpfn.errors import ConfigurationError, DataIntegrityError, DegenerateEvidenceError
from dpfn.model import (NUM_STATES, ContactDataset, HealthState, ModelParams,
                        ObservationDataset, ObservationModel, transition_matrix,
                        window_prior)

DEFAULT_WINDOW = 14
# Floor for per-day evidence in the population sweep, so that impossible
# observations under noiseless tests (alpha or beta equal to 0) do not zero a row.
_EVIDENCE_FLOOR = 1e-12


class Trace(NamedTuple):
  """Monotone state path: ``d_S`` days in S, then E, then I, the rest in R."""

  d_S: int
  d_E: int
  d_I: int
  window: int

  @property
  def d_R(self) -> int:
    return self.window - self.d_S - self.d_E - self.d_I

  def states(self) -> np.ndarray:
    return np.repeat(np.arange(NUM_STATES, dtype=np.int8),
                     [self.d_S, self.d_E, self.d_I, self.d_R])

  def state_at(self, day: int) -> HealthState:
    return HealthState(int(self.states()[day]))

  def label(self) -> str:
    return "".join(HealthState(s).name for s in self.states())


def enumerate_traces(window: int, include_exposed: bool = True) -> list:
  """All monotone traces over ``window`` days, ``C(window + 3, 3)`` of them.

  Paths censored at the window boundary (ending in S, E or I) are the
  triples with ``d_S + d_E + d_I == window``. With ``include_exposed=False``
  only SIR-style paths (``d_E == 0``) are returned.
  """
  if window < 1:
    raise ConfigurationError(f"window must be >= 1, got {window}")
  traces = []
  for d_s in range(window + 1):
    for d_e in range(window + 1 - d_s if include_exposed else 1):
      for d_i in range(window + 1 - d_s - d_e):
        traces.append(Trace(d_s, d_e, d_i, window))
  return traces


@functools.lru_cache(maxsize=None)
def trace_state_table(window: int) -> np.ndarray:
  """``(n_traces, window)`` array of states, rows ordered as ``enumerate_traces``."""
  table = np.stack([tr.states() for tr in enumerate_traces(window)])
  table.setflags(write=False)
  return table


def _safe_log(x):
  with np.errstate(divide="ignore"):
    return np.log(x)


def _observation_log_terms(table: np.ndarray, obs, obs_model: ObservationModel) -> np.ndarray:
  log_lik = _safe_log(obs_model.likelihood_table())
  total = np.zeros(table.shape[0])
  for day, outcome in obs:
    total += log_lik[int(outcome), table[:, int(day)]]
  return total


def trace_log_weights(daily_survival: Sequence[float], params: ModelParams, obs,
                      obs_model: ObservationModel, prior: Optional[np.ndarray] = None,
                      window: Optional[int] = None) -> np.ndarray:
  """Log weight of every enumerated trace, in ``enumerate_traces`` order.

  Args:
    daily_survival: probability of S -> S for each transition day, length
      ``window - 1``. Entry ``t`` drives the step from day ``t`` to ``t + 1``.
    obs: iterable of ``(day, outcome)`` with days indexed inside the window.
    prior: distribution of the first day's state, defaults to ``window_prior``.
  """
  daily_survival = np.asarray(daily_survival, dtype=float)
  window = len(daily_survival) + 1 if window is None else window
  if len(daily_survival) != window - 1:
    raise ValueError("daily_survival needs one entry per transition day")
  prior = window_prior(params) if prior is None else np.asarray(prior, dtype=float)
  table = trace_state_table(window)

  logw = _safe_log(prior)[table[:, 0]]
  for t, surv in enumerate(daily_survival):
    log_mat = _safe_log(transition_matrix(surv, params))
    logw = logw + log_mat[table[:, t], table[:, t + 1]]
  return logw + _observation_log_terms(table, obs, obs_model)


def trace_log_weight(trace: Trace, daily_survival: Sequence[float],
                     params: ModelParams, obs, obs_model: ObservationModel,
                     prior: Optional[np.ndarray] = None) -> float:
  """Log probability of a single trace jointly with the observations.

  Returns ``-inf`` for traces outside the support (e.g. starting in R or
  jumping from S straight to I).
  """
  prior = window_prior(params) if prior is None else np.asarray(prior, dtype=float)
  states = trace.states()
  log_lik = _safe_log(obs_model.likelihood_table())
  total = float(_safe_log(prior[states[0]]))
  for t in range(trace.window - 1):
    step = transition_matrix(daily_survival[t], params)[states[t], states[t + 1]]
    total += float(_safe_log(step))
  for day, outcome in obs:
    total += float(log_lik[int(outcome), states[int(day)]])
  return total


def message_from_score(phi, p1: float):
  """Message ``1 - p1 * phi`` sent along a contact."""
  return 1.0 - p1 * phi


def clip_score(phi, gamma_l: float = 0.0, gamma_u: float = 1.0):
  """Clamp scores into ``[gamma_l, gamma_u]``."""
  if not 0.0 <= gamma_l <= gamma_u <= 1.0:
    raise ConfigurationError(
        f"need 0 <= gamma_l <= gamma_u <= 1, got ({gamma_l}, {gamma_u})")
  if np.ndim(phi):
    return np.clip(phi, gamma_l, gamma_u)
  return min(gamma_u, max(gamma_l, phi))


@dataclass
class DailyMessageBundle:
  """Messages received on each day of a window.

  ``products[t]`` is the product of the messages from contacts on day ``t``
  and ``counts[t]`` their number. ``messages`` keeps the individual
  messages when the bundle was built from them. The last day's entry never
  affects marginals inside the window.
  """

  products: np.ndarray
  counts: np.ndarray
  messages: Optional[list] = None

  def __post_init__(self):
    self.products = np.asarray(self.products, dtype=float)
    self.counts = np.asarray(self.counts, dtype=np.int64)

  @property
  def window(self) -> int:
    return len(self.products)

  @classmethod
  def from_messages(cls, messages) -> "DailyMessageBundle":
    messages = [np.asarray(m, dtype=float).ravel() for m in messages]
    products = np.array([np.prod(m) if m.size else 1.0 for m in messages])
    counts = np.array([m.size for m in messages])
    return cls(products, counts, messages)

  @classmethod
  def from_scores(cls, scores, p1: float, gamma_l: float = 0.0,
                  gamma_u: float = 1.0) -> "DailyMessageBundle":
    """Clip each day's contact scores and turn them into messages."""
    return cls.from_messages(
        [message_from_score(clip_score(np.asarray(s, dtype=float), gamma_l, gamma_u), p1)
         for s in scores])

  @classmethod
  def empty(cls, window: int) -> "DailyMessageBundle":
    return cls(np.ones(window), np.zeros(window, dtype=np.int64), [np.empty(0)] * window)


@dataclass
class Belief:
  """Per-day marginals ``marginals[t, state]`` and the released score."""

  marginals: np.ndarray
  scored_day: int

  @property
  def score(self) -> float:
    return float(self.marginals[self.scored_day, HealthState.I])


def _normalized_marginals(logw: np.ndarray, window: int) -> np.ndarray:
  top = np.max(logw)
  if not np.isfinite(top):
    raise DegenerateEvidenceError("all traces have zero weight")
  w = np.exp(logw - top)
  w /= w.sum()
  table = trace_state_table(window)
  marg = np.zeros((window, NUM_STATES))
  for s in range(NUM_STATES):
    marg[:, s] = w @ (table == s)
  return marg


def _belief_from_survival(survival, obs, params, obs_model, scored_day, prior, window):
  scored_day = window - 1 if scored_day is None else scored_day
  if not 0 <= scored_day < window:
    raise ValueError(f"scored_day {scored_day} outside window of {window} days")
  logw = trace_log_weights(survival, params, obs, obs_model, prior, window)
  return Belief(_normalized_marginals(logw, window), scored_day)


def fn_belief_f2(bundle: DailyMessageBundle, obs, params: ModelParams,
                 obs_model: ObservationModel, scored_day: Optional[int] = None,
                 prior: Optional[np.ndarray] = None) -> Belief:
  """Marginals of one user from the daily message products (trace sum)."""
  window = bundle.window
  survival = (1.0 - params.p0) * bundle.products[:window - 1]
  return _belief_from_survival(survival, obs, params, obs_model, scored_day, prior, window)


def fn_covidscore_f2(bundle: DailyMessageBundle, obs, params: ModelParams,
                     obs_model: ObservationModel, scored_day: Optional[int] = None,
                     prior: Optional[np.ndarray] = None) -> float:
  """Probability of state I on ``scored_day`` (default: last window day).

  Depends on the contacts only through ``bundle.products``.
  """
  return fn_belief_f2(bundle, obs, params, obs_model, scored_day, prior).score


def fn_covidscore_f1(bundle: DailyMessageBundle, obs, params: ModelParams,
                     obs_model: ObservationModel, scored_day: Optional[int] = None,
                     prior: Optional[np.ndarray] = None) -> float:
  """Same score as ``fn_covidscore_f2`` but from the individual messages."""
  if bundle.messages is None:
    raise ValueError("bundle carries only products; build it with from_messages")
  window = len(bundle.messages)
  log_surv = np.array([
      np.log1p(-params.p0) + np.sum(_safe_log(m)) for m in bundle.messages[:window - 1]
  ])
  survival = np.exp(log_surv)
  return _belief_from_survival(survival, obs, params, obs_model, scored_day, prior,
                               window).score


# Population sweep


def observation_evidence(observations: ObservationDataset, num_users: int,
                         window_start: int, window: int,
                         obs_model: ObservationModel) -> np.ndarray:
  """``(num_users, window, 4)`` likelihood of each day's tests per state."""
  evidence = np.ones((num_users, window, NUM_STATES))
  if len(observations):
    rel = observations.t - window_start
    keep = (rel >= 0) & (rel < window)
    table = obs_model.likelihood_table()
    np.multiply.at(evidence, (observations.u[keep], rel[keep]),
                   table[observations.o[keep]])
  return evidence


def forward_backward(log_survival: np.ndarray, evidence: np.ndarray,
                     params: ModelParams, prior: Optional[np.ndarray] = None) -> np.ndarray:
  """Exact marginals of independent 4-state chains, one per row.

  Args:
    log_survival: ``(N, T - 1)`` log probability of S -> S per transition.
    evidence: ``(N, T, 4)`` observation likelihood per day and state.

  Returns:
    ``(N, T, 4)`` posterior marginals.
  """
  num, window, _ = evidence.shape
  prior = window_prior(params) if prior is None else np.asarray(prior, dtype=float)
  post = np.empty((num, window, NUM_STATES))
  bad = _fn_kernel.forward_backward_rows(
      np.ascontiguousarray(np.exp(log_survival)), np.ascontiguousarray(evidence, dtype=float),
      prior, float(params.g), float(params.h), post)
  if bad >= 0:
    raise DegenerateEvidenceError(f"evidence of user row {bad} has zero probability")
  return post


def gather_window(contacts: ContactDataset, prev_infected: np.ndarray, day: int,
                  window: int):
  """Contacts that affect the window ending on ``day`` and their senders' scores.

  Returns ``(receiver, slot, phi)`` where ``slot`` indexes the transition day
  inside the window and ``phi`` is the sender's belief of being I on the
  contact day, taken from the previous day's sweep.
  """
  num = prev_infected.shape[0]
  first = day - window + 1
  keep = (contacts.t >= first) & (contacts.t <= day - 1)
  if keep.all():
    u, v, t = contacts.u, contacts.v, contacts.t
  else:
    u, v, t = contacts.u[keep], contacts.v[keep], contacts.t[keep]
  if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= num):
    raise DataIntegrityError("contact references an unknown user id")
  slot = t - first
  # prev_infected covers days [day - window, day - 1].
  phi = prev_infected[v, slot + 1]
  return u, slot, phi


def fn_sweep(prev_infected: np.ndarray, contacts: ContactDataset,
             observations: ObservationDataset, day: int, params: ModelParams,
             obs_model: ObservationModel, window: int = DEFAULT_WINDOW,
             gamma_l: float = 0.0, gamma_u: float = 1.0,
             message_noise: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             product_noise: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
             evidence_floor: float = _EVIDENCE_FLOOR) -> np.ndarray:
  """One daily FN round for every user.

  Args:
    prev_infected: ``(N, window)`` beliefs of being I on days
      ``day - window .. day - 1``, as computed by yesterday's sweep. Use
      zeros on the first day.
    contacts: all known contacts; only those on days ``day - window + 1 ..
      day - 1`` are used, older ones are dropped.
    observations: test results; only those inside the window are used.
    message_noise: optional transform applied to every incoming score
      before clipping (per-message baseline).
    product_noise: optional transform ``(log_products, counts) ->
      log_products`` of the daily products (DPFN mechanism).

  Returns:
    ``(N, window, 4)`` marginals for days ``day - window + 1 .. day``. The
    released score of each user is ``result[:, -1, HealthState.I]``.
  """
  num = prev_infected.shape[0]
  if prev_infected.shape != (num, window):
    raise ValueError(f"prev_infected must have shape (N, {window})")
  if message_noise is None:
    # Every sender has one message per day, so take the logs once.
    log_msg = np.log1p(-params.p1 * clip_score(np.asarray(prev_infected, dtype=float),
                                                gamma_l, gamma_u))
    log_prod = np.zeros((num, window - 1))
    counts = np.zeros((num, window - 1), dtype=np.int64)
    bad = _fn_kernel.window_log_products(contacts.u, contacts.v, contacts.t, log_msg,
                                         day - window + 1, log_prod, counts)
    if bad >= 0:
      raise DataIntegrityError("contact references an unknown user id")
  else:
    u, slot, phi = gather_window(contacts, prev_infected, day, window)
    phi = clip_score(message_noise(phi), gamma_l, gamma_u)
    flat = u.astype(np.int64) * (window - 1) + slot
    log_prod = np.bincount(flat, weights=np.log1p(-params.p1 * phi),
                           minlength=num * (window - 1)).reshape(num, window - 1)
    counts = np.bincount(flat, minlength=num * (window - 1)).reshape(num, window - 1)
  if product_noise is not None:
    log_prod = product_noise(log_prod, counts)

  evidence = observation_evidence(observations, num, day - window + 1, window, obs_model)
  if evidence_floor:
    evidence = np.maximum(evidence, evidence_floor)
  log_surv = np.log1p(-params.p0) + log_prod
  return forward_backward(log_surv, evidence, params)


def shift_infected(marginals: np.ndarray) -> np.ndarray:
  """I-marginals of a sweep, ready to be tomorrow's ``prev_infected``."""
  return marginals[:, :, HealthState.I].copy()
