"""Comparison methods: noised traditional tracing, per-message DP, and DP Gibbs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from dpfn import _gibbs_kernel as kernel
from dpfn.errors import ConfigurationError, DataIntegrityError
from dpfn.fn import DEFAULT_WINDOW, Trace, enumerate_traces
from dpfn.model import (NUM_STATES, ContactDataset, HealthState, ModelParams,
                        ObservationDataset, ObservationModel, window_prior)
from dpfn.privacy import PrivacyBudget, gaussian_sigma

# Traditional tracing


def traditional_score(window_contacts: Sequence[int], budget: PrivacyBudget,
                      rng: np.random.Generator, sigma: Optional[float] = None) -> float:
  """Noised count of contacts that tested positive, clipped at zero.

  Args:
    window_contacts: one 0/1 indicator per contact in the window.
    sigma: noise scale; by default the Gaussian mechanism with sensitivity 1.
  """
  if sigma is None:
    sigma = gaussian_sigma(1.0, budget, strict=False)
  count = float(np.sum(window_contacts))
  return max(0.0, count + sigma * rng.standard_normal()) if sigma else count


def positive_contact_counts(contacts: ContactDataset, observations: ObservationDataset,
                            day: int, num_users: int, window: int = DEFAULT_WINDOW) -> np.ndarray:
  """Per user, the number of window contacts whose sender tested positive in the window."""
  first = day - window + 1
  pos_obs = (observations.o == 1) & (observations.t >= first) & (observations.t < day)
  positive = np.zeros(num_users, dtype=bool)
  positive[observations.u[pos_obs]] = True
  keep = (contacts.t >= first) & (contacts.t < day)
  u, v = contacts.u[keep], contacts.v[keep]
  if u.size and max(u.max(), v.max()) >= num_users:
    raise DataIntegrityError("contact references an unknown user id")
  return np.bincount(u[positive[v]], minlength=num_users).astype(float)


def traditional_scores(counts: np.ndarray, budget: PrivacyBudget,
                       rng: np.random.Generator) -> np.ndarray:
  """Vectorized ``traditional_score`` over precomputed counts."""
  sigma = gaussian_sigma(1.0, budget, strict=False)
  noise = rng.standard_normal(counts.shape)
  if sigma == 0.0:
    return counts.astype(float)
  return np.maximum(counts + sigma * noise, 0.0)


# Per-message noise in the logit domain

_TINY = np.finfo(float).tiny
_EPS_BELOW_ONE = np.finfo(float).epsneg


@dataclass(frozen=True)
class PerMessageConfig:
  """Clip messages into ``[gamma, 1 - gamma]``; ``sigma_logit`` overrides the calibration."""

  gamma: float = 0.01
  sigma_logit: Optional[float] = None

  def __post_init__(self):
    if not 0.0 < self.gamma < 0.5:
      raise ConfigurationError(f"gamma must be in (0, 0.5), got {self.gamma}")

  @property
  def sensitivity(self) -> float:
    return 2.0 * abs(float(logit(self.gamma)))

  def sigma(self, budget: PrivacyBudget) -> float:
    if self.sigma_logit is not None:
      return self.sigma_logit
    return gaussian_sigma(self.sensitivity, budget, strict=False)


def per_message_noise(phi, cfg: PerMessageConfig, budget: PrivacyBudget,
                      rng: np.random.Generator):
  """Clip, move to the logit domain, add Gaussian noise, map back with the sigmoid."""
  clipped = np.clip(phi, cfg.gamma, 1.0 - cfg.gamma)
  sigma = cfg.sigma(budget)
  noise = rng.standard_normal(np.shape(clipped))
  if sigma == 0.0:
    return clipped
  # Large noise saturates the sigmoid in floating point; stay strictly inside (0, 1).
  out = np.clip(expit(logit(clipped) + sigma * noise), _TINY, 1.0 - _EPS_BELOW_ONE)
  return float(out) if np.ndim(out) == 0 else out


# Gibbs sampling with clipped likelihoods


@dataclass(frozen=True)
class GibbsConfig:
  clip_B: float = 10.0
  n_samples: int = 10
  skip: int = 10
  burn_in: int = 100

  def __post_init__(self):
    if not self.clip_B >= 0:
      raise ConfigurationError("clip_B must be >= 0")
    if self.n_samples < 1 or self.skip < 1 or self.burn_in < 0:
      raise ConfigurationError("need n_samples >= 1, skip >= 1, burn_in >= 0")

  @property
  def n_sweeps(self) -> int:
    return self.burn_in + self.n_samples * self.skip

  def collect_mask(self) -> np.ndarray:
    mask = np.zeros(self.n_sweeps, dtype=np.bool_)
    mask[self.burn_in + self.skip - 1::self.skip] = True
    return mask


def gibbs_clip_for_budget(budget: PrivacyBudget, cfg: GibbsConfig) -> float:
  """Likelihood clip giving ``budget.epsilon`` over ``cfg.n_samples`` released samples.

  A posterior sample with log-likelihoods bounded by ``B`` is ``4 B``-DP,
  and the samples compose linearly, so ``B = epsilon / (4 n_samples)``.
  """
  if budget.is_noiseless:
    return math.inf
  return budget.epsilon / (4.0 * cfg.n_samples)


GIBBS_ACCOUNTING = "epsilon_total = n_samples * 4 * clip_B (clip_B = epsilon / (4 n_samples))"


def _csr(keys: np.ndarray, values: Sequence[np.ndarray], num: int):
  order = np.argsort(keys, kind="stable")
  ptr = np.zeros(num + 1, dtype=np.int64)
  np.cumsum(np.bincount(keys, minlength=num), out=ptr[1:])
  return (ptr,) + tuple(np.ascontiguousarray(v[order]) for v in values)


@dataclass
class GibbsInputs:
  """Contacts and tests of one window in the layout the compiled sampler expects."""

  num_users: int
  window: int
  in_ptr: np.ndarray
  in_src: np.ndarray
  in_slot: np.ndarray
  out_ptr: np.ndarray
  out_dst: np.ndarray
  out_slot: np.ndarray
  obs_ptr: np.ndarray
  obs_day: np.ndarray
  obs_out: np.ndarray

  @classmethod
  def from_window(cls, num_users: int, contacts: ContactDataset,
                  observations: ObservationDataset, window_start: int,
                  window: int = DEFAULT_WINDOW) -> "GibbsInputs":
    """Keep contacts on slots ``0 .. window - 2`` and tests on ``0 .. window - 1``."""
    rel = contacts.t - window_start
    keep = (rel >= 0) & (rel < window - 1)
    u, v, slot = contacts.u[keep], contacts.v[keep], rel[keep]
    if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= num_users):
      raise DataIntegrityError("contact references an unknown user id")
    in_ptr, in_src, in_slot = _csr(u, (v, slot), num_users)
    out_ptr, out_dst, out_slot = _csr(v, (u, slot), num_users)
    orel = observations.t - window_start
    okeep = (orel >= 0) & (orel < window)
    obs_ptr, obs_day, obs_out = _csr(observations.u[okeep],
                                     (orel[okeep], observations.o[okeep]), num_users)
    return cls(num_users, window, in_ptr, in_src, in_slot, out_ptr, out_dst, out_slot,
               obs_ptr, obs_day, obs_out)


def _trace_arrays(window: int):
  traces = enumerate_traces(window)
  return (np.array([t.d_S for t in traces], dtype=np.int64),
          np.array([t.d_E for t in traces], dtype=np.int64),
          np.array([t.d_I for t in traces], dtype=np.int64))


def _log(x: float) -> float:
  return math.log(x) if x > 0 else -math.inf


def _model_args(params: ModelParams, obs_model: ObservationModel):
  with np.errstate(divide="ignore"):
    log_lik = np.log(obs_model.likelihood_table())
    log_prior = np.log(window_prior(params))
  return (log_lik, log_prior, math.log1p(-params.p0), math.log1p(-params.p1),
          _log(params.g), _log(1.0 - params.g), _log(params.h), _log(1.0 - params.h))


def trace_index(trace: Trace) -> int:
  """Position of ``trace`` in ``enumerate_traces(trace.window)``."""
  return enumerate_traces(trace.window).index(trace)


def all_susceptible_index(window: int) -> int:
  return len(enumerate_traces(window)) - 1


def gibbs_conditional_log_weights(user: int, current: np.ndarray, inputs: GibbsInputs,
                                  params: ModelParams, obs_model: ObservationModel,
                                  clip_b: float) -> np.ndarray:
  """Clipped log weight of every trace of ``user`` given everyone else's current trace."""
  tr_s, tr_e, tr_i = _trace_arrays(inputs.window)
  current = np.ascontiguousarray(current, dtype=np.int64)
  k_in = np.zeros((inputs.num_users, inputs.window))
  infectious = _infectious_table(current, tr_s, tr_e, tr_i, inputs.window)
  for u in range(inputs.num_users):
    lo, hi = inputs.in_ptr[u], inputs.in_ptr[u + 1]
    np.add.at(k_in[u], inputs.in_slot[lo:hi],
              infectious[inputs.in_src[lo:hi], inputs.in_slot[lo:hi]])
  out = np.empty(len(tr_s))
  kernel.conditional_log_weights(
      user, current, tr_s, tr_e, tr_i, inputs.window, k_in, inputs.in_ptr, inputs.in_slot,
      inputs.out_ptr, inputs.out_dst, inputs.out_slot, inputs.obs_ptr, inputs.obs_day,
      inputs.obs_out, *_model_args(params, obs_model), float(clip_b), out)
  return out


def _infectious_table(current, tr_s, tr_e, tr_i, window):
  days = np.arange(window)
  start = (tr_s + tr_e)[current][:, None]
  end = (tr_s + tr_e + tr_i)[current][:, None]
  return ((days >= start) & (days < end)).astype(float)


def gibbs_sample_user_trace(user: int, neighbor_traces: np.ndarray, inputs: GibbsInputs,
                            params: ModelParams, obs_model: ObservationModel,
                            cfg: GibbsConfig, rng: np.random.Generator) -> Trace:
  """Draw ``user``'s trace from its clipped full conditional.

  ``neighbor_traces`` holds the current trace index of every user (the entry
  of ``user`` itself is ignored except as the state being replaced).
  """
  logw = gibbs_conditional_log_weights(user, neighbor_traces, inputs, params, obs_model,
                                       cfg.clip_B)
  j = kernel.sample_from_log_weights(logw, rng.random())
  return enumerate_traces(inputs.window)[j]


def gibbs_marginals(inputs: GibbsInputs, params: ModelParams, obs_model: ObservationModel,
                    cfg: GibbsConfig, rng: np.random.Generator,
                    clip_b: Optional[float] = None,
                    init: Optional[np.ndarray] = None) -> np.ndarray:
  """Run the chain over all users and return empirical marginals ``(N, T, 4)``.

  Burn-in sweeps are discarded, then one sample per user is kept every
  ``cfg.skip`` sweeps until ``cfg.n_samples`` are collected.
  """
  clip_b = cfg.clip_B if clip_b is None else clip_b
  tr_s, tr_e, tr_i = _trace_arrays(inputs.window)
  if init is None:
    cur = np.full(inputs.num_users, all_susceptible_index(inputs.window), dtype=np.int64)
  else:
    cur = np.array(init, dtype=np.int64)
  uniforms = rng.random((cfg.n_sweeps, inputs.num_users))
  counts = np.zeros((inputs.num_users, inputs.window, NUM_STATES))
  n = kernel.run_chain(cur, tr_s, tr_e, tr_i, inputs.window, inputs.in_ptr, inputs.in_src,
                       inputs.in_slot, inputs.out_ptr, inputs.out_dst, inputs.out_slot,
                       inputs.obs_ptr, inputs.obs_day, inputs.obs_out,
                       *_model_args(params, obs_model), float(clip_b), uniforms,
                       cfg.collect_mask(), counts)
  return counts / n


def gibbs_covidscore(user: int, inputs: GibbsInputs, params: ModelParams,
                     obs_model: ObservationModel, cfg: GibbsConfig,
                     rng: np.random.Generator, clip_b: Optional[float] = None) -> float:
  """Fraction of kept samples in which ``user`` is I on the last window day."""
  return float(gibbs_marginals(inputs, params, obs_model, cfg, rng, clip_b)[user, -1,
                                                                               HealthState.I])
