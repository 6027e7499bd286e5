"""Daily risk scorers plugged into the simulator, one per tracing method."""

from __future__ import annotations

import functools
from typing import Optional

import numpy as np

from dpfn import baselines, rng as rngs
from dpfn.errors import ConfigurationError
from dpfn.fn import fn_sweep, shift_infected
from dpfn.model import ContactDataset, HealthState, ModelParams, ObservationDataset, ObservationModel
from dpfn.privacy import NoisePlan, PrivacyBudget, lognormal_mechanism_log


class Tracer:
  """Produces one score per agent each day; higher means test sooner."""

  tests = True

  def __init__(self, num_users: int, window: int, params: ModelParams,
               obs_model: ObservationModel, budget: PrivacyBudget, master_seed: int):
    self.num_users = num_users
    self.window = window
    self.params = params
    self.obs_model = obs_model
    self.budget = budget
    self.master_seed = master_seed

  def inference_rng(self, day: int) -> np.random.Generator:
    return rngs.stream(self.master_seed, "inference", day)

  def scores(self, day: int, contacts: ContactDataset,
             observations: ObservationDataset) -> np.ndarray:
    raise NotImplementedError


class NoTracing(Tracer):
  """No testing at all; scores are constant."""

  tests = False

  def scores(self, day, contacts, observations):
    return np.zeros(self.num_users)


class FNTracer(Tracer):
  """Factorized Neighbors, optionally with a noise hook on messages or products."""

  def __init__(self, *args, gamma_l: float = 0.0, gamma_u: float = 1.0, **kwargs):
    super().__init__(*args, **kwargs)
    self.gamma_l = gamma_l
    self.gamma_u = gamma_u
    self.prev = np.zeros((self.num_users, self.window))

  def hooks(self, rng):
    return {}

  def scores(self, day, contacts, observations):
    marg = fn_sweep(self.prev, contacts, observations, day, self.params, self.obs_model,
                    self.window, self.gamma_l, self.gamma_u, **self.hooks(self.inference_rng(day)))
    self.prev = shift_infected(marg)
    return marg[:, -1, HealthState.I].copy()


class DPFNTracer(FNTracer):
  """FN with the log-normal mechanism on every daily product of messages."""

  def __init__(self, *args, **kwargs):
    super().__init__(*args, **kwargs)
    self.plan = NoisePlan.for_budget(self.budget, self.params.p1, self.gamma_l, self.gamma_u)

  def hooks(self, rng):
    return {"product_noise": lambda log_prod, counts: lognormal_mechanism_log(
        log_prod, counts, self.plan, rng)}


class PerMessageTracer(FNTracer):
  """FN whose incoming scores are each noised in the logit domain."""

  def __init__(self, *args, per_message: Optional[baselines.PerMessageConfig] = None,
               **kwargs):
    super().__init__(*args, **kwargs)
    self.cfg = per_message or baselines.PerMessageConfig()

  def hooks(self, rng):
    return {"message_noise": functools.partial(baselines.per_message_noise, cfg=self.cfg,
                                               budget=self.budget, rng=rng)}


class TraditionalTracer(Tracer):
  """Noised count of contacts that recently tested positive."""

  def scores(self, day, contacts, observations):
    counts = baselines.positive_contact_counts(contacts, observations, day, self.num_users,
                                               self.window)
    return baselines.traditional_scores(counts, self.budget, self.inference_rng(day))


class GibbsTracer(Tracer):
  """Gibbs sampling over the whole population with clipped likelihoods."""

  def __init__(self, *args, gibbs: Optional[baselines.GibbsConfig] = None, **kwargs):
    super().__init__(*args, **kwargs)
    self.cfg = gibbs or baselines.GibbsConfig()
    self.clip_b = baselines.gibbs_clip_for_budget(self.budget, self.cfg)

  def scores(self, day, contacts, observations):
    inputs = baselines.GibbsInputs.from_window(self.num_users, contacts, observations,
                                               day - self.window + 1, self.window)
    marg = baselines.gibbs_marginals(inputs, self.params, self.obs_model, self.cfg,
                                     self.inference_rng(day), clip_b=self.clip_b)
    return marg[:, -1, HealthState.I].copy()


_TRACERS = {
    "dpfn": DPFNTracer,
    "fn_noiseless": FNTracer,
    "traditional": TraditionalTracer,
    "per_message": PerMessageTracer,
    "gibbs": GibbsTracer,
    "none": NoTracing,
}


def make_tracer(method: str, num_users: int, sim, params: ModelParams,
                obs_model: ObservationModel, budget: Optional[PrivacyBudget],
                master_seed: int, **kwargs) -> Tracer:
  if method not in _TRACERS:
    raise ConfigurationError(f"unknown method {method!r}; choose from {sorted(_TRACERS)}")
  budget = PrivacyBudget(float("inf")) if budget is None else budget
  if method == "fn_noiseless":
    budget = PrivacyBudget(float("inf"), budget.delta)
  return _TRACERS[method](num_users, sim.window, params, obs_model, budget, master_seed,
                          **kwargs)
