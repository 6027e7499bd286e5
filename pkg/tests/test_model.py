import numpy as np
import pytest

from dpfn.errors import ConfigurationError
from dpfn.model import (ContactDataset, HealthState, ModelParams, ObservationDataset,
                        ObservationModel, noisy_or_survival, observation_likelihood,
                        step_distribution, transition_matrix, window_prior)

from oracles import step_prob

S, E, I, R = HealthState


def test_health_state_order():
  assert list(HealthState) == [S, E, I, R]
  assert S < E < I < R


def test_defaults():
  p = ModelParams()
  assert (p.p0, p.p1, p.g, p.h) == (0.001, 0.05, 0.99, 0.10)
  o = ObservationModel()
  assert (o.alpha, o.beta) == (0.001, 0.01)


@pytest.mark.parametrize("kwargs", [{"p1": 1.0}, {"p0": -0.1}, {"h": 1.0}, {"g": 1.5}])
def test_invalid_params(kwargs):
  with pytest.raises(ConfigurationError):
    ModelParams(**kwargs)


def test_invalid_obs_model():
  with pytest.raises(ConfigurationError):
    ObservationModel(alpha=1.0)


def test_observation_likelihood_examples():
  assert observation_likelihood(I, 1, ObservationModel(alpha=0.001)) == pytest.approx(0.999)
  assert observation_likelihood(S, 1, ObservationModel(beta=0.01)) == pytest.approx(0.01)
  assert observation_likelihood(R, 0, ObservationModel(beta=0.0)) == 1.0


def test_observation_likelihood_sums_to_one(rng):
  for _ in range(50):
    obs = ObservationModel(*rng.uniform(0, 0.99, 2))
    for s in HealthState:
      total = observation_likelihood(s, 0, obs) + observation_likelihood(s, 1, obs)
      assert total == pytest.approx(1.0, abs=1e-12)
    table = obs.likelihood_table()
    for s in HealthState:
      assert table[1, s] == observation_likelihood(s, 1, obs)


def test_noisy_or_examples():
  assert noisy_or_survival(ModelParams(), 0) == pytest.approx(0.999)
  assert noisy_or_survival(ModelParams(), 2) == pytest.approx(0.9015975, abs=1e-12)
  assert noisy_or_survival(ModelParams(p0=0.0, p1=0.0), 7) == 1.0


def test_noisy_or_monotone(rng):
  for _ in range(100):
    p = ModelParams(p0=rng.uniform(0, 0.5), p1=rng.uniform(0, 0.99))
    vals = [noisy_or_survival(p, k) for k in range(30)]
    assert vals[0] == pytest.approx(1 - p.p0)
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_step_distribution_examples():
  p = ModelParams()
  np.testing.assert_allclose(step_distribution(S, 0.9016, p), [0.9016, 0.0984, 0, 0], atol=1e-12)
  np.testing.assert_array_equal(step_distribution(R, 0.3, p), [0, 0, 0, 1])
  np.testing.assert_allclose(step_distribution(E, 0.5, p), [0, 0.01, 0.99, 0], atol=1e-12)


def test_step_distribution_rows_sum_to_one_on_grid():
  for g in np.linspace(0, 1, 11):
    for h in np.linspace(0, 0.99, 11):
      p = ModelParams(g=g, h=h)
      for surv in np.linspace(0, 1, 101):
        for s in HealthState:
          row = step_distribution(s, surv, p)
          assert abs(row.sum() - 1.0) <= 1e-12
          assert (row >= 0).all()


def test_step_distribution_matches_case_oracle(rng):
  for _ in range(20):
    p = ModelParams(g=rng.uniform(), h=rng.uniform(0, 0.99))
    surv = rng.uniform()
    mat = transition_matrix(surv, p)
    for a in range(4):
      for b in range(4):
        assert mat[a, b] == pytest.approx(step_prob(a, b, surv, p.g, p.h), abs=1e-15)


def test_step_distribution_rejects_bad_survival():
  with pytest.raises(ValueError):
    step_distribution(S, 1.5, ModelParams())


def test_isolated_user_chain():
  """Iterating the kernel from the window prior gives the no-contact marginal chain."""
  p = ModelParams()
  dist = window_prior(p)
  surv = noisy_or_survival(p, 0)
  chain = [dist]
  for _ in range(13):
    dist = dist @ transition_matrix(surv, p)
    chain.append(dist)
  chain = np.array(chain)
  np.testing.assert_allclose(chain.sum(axis=1), 1.0, atol=1e-12)
  # closed form of the S mass
  np.testing.assert_allclose(chain[:, 0], (1 - p.p0) * surv**np.arange(14), rtol=1e-12)


def test_datasets():
  c = ContactDataset.from_tuples([(0, 1, 3), (1, 0, 3)])
  assert len(c) == 2 and c.u.tolist() == [0, 1]
  assert len(ContactDataset.concat([c, c])) == 4
  assert len(ContactDataset.empty()) == 0
  o = ObservationDataset.from_tuples([(2, 5, 1), (2, 6, 0), (1, 5, 0)])
  assert o.for_user(2) == [(5, 1), (6, 0)]
  with pytest.raises(ValueError):
    ObservationDataset([0], [0], [2])
  with pytest.raises(ValueError):
    ContactDataset([0, 1], [1], [0])
