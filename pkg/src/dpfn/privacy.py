"""Privacy accounting for the log-normal mechanism and the Gaussian baselines.

The daily product of messages is released through a log-normal
perturbation with bias-corrected mean parameter. Its Renyi divergence
between adjacent datasets has a closed form, the variance is calibrated per
contact count, and the RDP order that minimizes the noise for a target
``(epsilon, delta)`` is available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dpfn.errors import ConfigurationError, OutOfRegimeError

DEFAULT_DELTA = 1e-3
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class PrivacyBudget:
  """Target ``(epsilon, delta)``. ``epsilon = inf`` means no privacy noise."""

  epsilon: float
  delta: float = DEFAULT_DELTA

  def __post_init__(self):
    if not self.epsilon > 0:
      raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
    if not 0.0 < self.delta < 1.0:
      raise ConfigurationError(f"delta must be in (0, 1), got {self.delta}")

  @property
  def log_inv_delta(self) -> float:
    return math.log(1.0 / self.delta)

  @property
  def is_noiseless(self) -> bool:
    return math.isinf(self.epsilon)


@dataclass(frozen=True)
class RdpPoint:
  """Order ``a`` and divergence bound ``rho`` of a Renyi DP guarantee."""

  a: float
  rho: float

  def epsilon(self, delta: float) -> float:
    """``(epsilon, delta)`` conversion of this RDP guarantee."""
    return self.rho + math.log(1.0 / delta) / (self.a - 1.0)

  @property
  def noise_objective(self) -> float:
    return self.a / self.rho


def optimal_rdp_order(budget: PrivacyBudget) -> RdpPoint:
  """Closed-form order minimizing ``a / rho`` subject to the DP conversion.

  ``a = 1 + (d + sqrt(d (d + eps))) / eps`` and ``rho = eps - d / (a - 1)``
  with ``d = log(1 / delta)``.
  """
  if budget.is_noiseless:
    return RdpPoint(a=1.0, rho=math.inf)
  eps, d = budget.epsilon, budget.log_inv_delta
  x = (d + math.sqrt(d * (d + eps))) / eps
  return RdpPoint(a=1.0 + x, rho=eps - d / x)


def rdp_order_quartic(x: float, budget: PrivacyBudget) -> float:
  """Stationarity polynomial of the order problem in ``x = a - 1``.

  Returns ``eps^2 x^4 - 2 d eps x^3 - 2 d^2 x - d^2``, which vanishes at the
  optimal order.
  """
  eps, d = budget.epsilon, budget.log_inv_delta
  return eps**2 * x**4 - 2 * d * eps * x**3 - 2 * d**2 * x - d**2


def rdp_order_quartic_roots(budget: PrivacyBudget) -> tuple:
  """The four roots ``(x1, x2, x3, x4)`` of ``rdp_order_quartic``.

  ``x1, x2`` are purely imaginary, ``x4`` is negative, ``x3`` is the feasible one.
  """
  eps, d = budget.epsilon, budget.log_inv_delta
  imag = math.sqrt(d / eps)
  root = math.sqrt(d * (d + eps))
  return (complex(0, imag), complex(0, -imag), (d + root) / eps, (d - root) / eps)


def _objective(a: float, eps: float, d: float) -> float:
  rho = eps - d / (a - 1.0)
  return a / rho if rho > 0 else math.inf


def _golden_section(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 500):
  c = hi - _GOLDEN * (hi - lo)
  e = lo + _GOLDEN * (hi - lo)
  fc, fe = f(c), f(e)
  for _ in range(max_iter):
    if hi - lo <= tol * max(1.0, abs(c)):
      break
    if fc < fe:
      hi, e, fe = e, c, fc
      c = hi - _GOLDEN * (hi - lo)
      fc = f(c)
    else:
      lo, c, fc = c, e, fe
      e = lo + _GOLDEN * (hi - lo)
      fe = f(e)
  return 0.5 * (lo + hi)


def rdp_order_line_search(budget: PrivacyBudget, grid_size: int = 2000) -> RdpPoint:
  """Numerical minimizer of ``a / rho`` under ``rho = eps - d / (a - 1)``.

  A log-spaced grid over the feasible orders up to ten times the closed-form
  order brackets the minimum, then golden-section search refines it.
  """
  if budget.is_noiseless:
    return RdpPoint(a=1.0, rho=math.inf)
  eps, d = budget.epsilon, budget.log_inv_delta
  a_min = 1.0 + d / eps
  a_max = 10.0 * optimal_rdp_order(budget).a
  # offsets above the feasibility edge, where rho = 0
  offsets = np.geomspace(1e-9 * a_min, a_max - a_min, grid_size)
  grid = a_min + offsets
  values = np.array([_objective(a, eps, d) for a in grid])
  k = int(np.argmin(values))
  lo = grid[max(k - 1, 0)]
  hi = grid[min(k + 1, grid_size - 1)]
  a = _golden_section(lambda z: _objective(z, eps, d), lo, hi)
  return RdpPoint(a=a, rho=eps - d / (a - 1.0))


def worst_case_log_gap(gamma_l: float, gamma_u: float, p1: float) -> float:
  """Largest change of the log product when one contact's score moves inside the clips."""
  if not 0.0 <= gamma_l <= gamma_u <= 1.0:
    raise ConfigurationError(f"invalid clip bounds ({gamma_l}, {gamma_u})")
  if gamma_u * p1 >= 1.0:
    raise ConfigurationError("gamma_u * p1 must be < 1")
  return abs(math.log1p(-gamma_u * p1) - math.log1p(-gamma_l * p1))


def per_message_sigma2(point: RdpPoint, C: int, gamma_l: float, gamma_u: float,
                       p1: float) -> float:
  """Smallest per-message variance parameter that gives ``(a, rho)``-RDP.

  ``a / (2 C rho) * (log(1 - gamma_u p1) - log(1 - gamma_l p1))^2``
  """
  if C < 1:
    raise ConfigurationError(f"contact count must be >= 1, got {C}")
  gap = worst_case_log_gap(gamma_l, gamma_u, p1)
  return point.a / (2.0 * C * point.rho) * gap**2


def lognormal_renyi_divergence(mu_u: float, mu_v: float, sigma2_u: float,
                               sigma2_v: float, a: float) -> float:
  """Order-``a`` Renyi divergence ``D_a(p_u || p_v)`` of two log-normals."""
  sigma2_star = a * sigma2_v + (1.0 - a) * sigma2_u
  if sigma2_star <= 0:
    raise ConfigurationError(f"order a={a} gives non-positive mixed variance")
  return (0.5 * math.log(sigma2_v / sigma2_u)
          + math.log(sigma2_v / sigma2_star) / (2.0 * (a - 1.0))
          + a * (mu_u - mu_v)**2 / (2.0 * sigma2_star))


@dataclass(frozen=True)
class NoisePlan:
  """Everything the log-normal mechanism needs for a given budget.

  The per-message variance depends on the contact count ``C``; the variance
  of the daily product, ``C`` times that value, does not.
  """

  point: RdpPoint
  p1: float
  gamma_l: float = 0.0
  gamma_u: float = 1.0

  @classmethod
  def for_budget(cls, budget: PrivacyBudget, p1: float, gamma_l: float = 0.0,
                 gamma_u: float = 1.0) -> "NoisePlan":
    worst_case_log_gap(gamma_l, gamma_u, p1)
    return cls(optimal_rdp_order(budget), p1, gamma_l, gamma_u)

  @property
  def is_noiseless(self) -> bool:
    return math.isinf(self.point.rho)

  def sigma2_per_message(self, C: int) -> float:
    if self.is_noiseless:
      return 0.0
    return per_message_sigma2(self.point, C, self.gamma_l, self.gamma_u, self.p1)

  def sigma2_product(self, C: int) -> float:
    return C * self.sigma2_per_message(C)

  @property
  def product_sigma2(self) -> float:
    """``C * sigma2_per_message(C)``, the same for every ``C >= 1``."""
    if self.is_noiseless:
      return 0.0
    return self.point.a / (2.0 * self.point.rho) * worst_case_log_gap(
        self.gamma_l, self.gamma_u, self.p1)**2

  def log_bounds(self, C):
    """Public interval of the log product for ``C`` contacts."""
    C = np.asarray(C, dtype=float)
    return C * math.log1p(-self.gamma_u * self.p1), C * math.log1p(-self.gamma_l * self.p1)


@dataclass(frozen=True)
class LogNormalSample:
  mu: float
  sigma2: float
  value: float

  @property
  def expected_value(self) -> float:
    return math.exp(self.mu + self.sigma2 / 2.0)


def draw_lognormal(expected_value: float, sigma2: float, rng: np.random.Generator
                   ) -> LogNormalSample:
  """Log-normal draw with mean ``expected_value``: ``mu = log(m) - sigma2 / 2``."""
  mu = math.log(expected_value) - sigma2 / 2.0
  value = math.exp(mu + math.sqrt(sigma2) * rng.standard_normal())
  return LogNormalSample(mu, sigma2, value)


def lognormal_mechanism(omega_product, C: int, plan: NoisePlan, rng: np.random.Generator,
                        size: Optional[int] = None, clip: bool = True):
  """Privatize the product of ``C`` messages.

  The draw is log-normal with variance parameter ``plan.sigma2_product(C)``
  and expected value ``omega_product``, then clipped to the interval
  ``[(1 - gamma_u p1)^C, (1 - gamma_l p1)^C]`` that is public knowledge.
  With ``C = 0`` the product is the constant 1 and is returned unchanged.
  ``size`` draws several independent samples; ``clip=False`` returns the
  raw draws.
  """
  if C == 0 or plan.is_noiseless:
    return omega_product if size is None else np.full(size, float(omega_product))
  sigma2 = plan.sigma2_product(C)
  mu = math.log(omega_product) - sigma2 / 2.0
  z = rng.standard_normal(size)
  log_val = mu + math.sqrt(sigma2) * z
  if clip:
    lo, hi = plan.log_bounds(C)
    log_val = np.clip(log_val, lo, hi)
  out = np.exp(log_val)
  return float(out) if size is None else out


def lognormal_mechanism_log(log_products: np.ndarray, counts: np.ndarray, plan: NoisePlan,
                            rng: np.random.Generator) -> np.ndarray:
  """Vectorized mechanism on log products; entries with zero contacts pass through.

  One standard normal is drawn per entry, including zero-count entries, so
  the stream consumed does not depend on the contact pattern.
  """
  z = rng.standard_normal(log_products.shape)
  if plan.is_noiseless:
    return log_products
  s2 = plan.product_sigma2
  noisy = log_products - s2 / 2.0 + math.sqrt(s2) * z
  lo, hi = plan.log_bounds(counts)
  noisy = np.clip(noisy, lo, hi)
  return np.where(counts > 0, noisy, log_products)


def gaussian_sigma(sensitivity: float, budget: PrivacyBudget, strict: bool = True) -> float:
  """Noise standard deviation of the classic Gaussian mechanism.

  ``sensitivity * sqrt(2 log(1.25 / delta)) / epsilon``. The bound is proven
  for ``epsilon <= 1``; larger values raise unless ``strict=False``, in which
  case the same formula is used as a conservative extrapolation.
  """
  if sensitivity < 0:
    raise ConfigurationError("sensitivity must be non-negative")
  if budget.is_noiseless:
    return 0.0
  if strict and budget.epsilon > 1.0:
    raise OutOfRegimeError(
        f"classic Gaussian calibration needs epsilon <= 1, got {budget.epsilon}")
  return sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


def worst_case_log_means(C: int, plan: NoisePlan):
  """Log-normal mean parameters of the two worst-case adjacent products.

  All ``C`` scores at ``gamma_l`` versus one of them switched to ``gamma_u``.
  """
  s2 = plan.sigma2_product(C)
  lo_msg = math.log1p(-plan.gamma_l * plan.p1)
  hi_msg = math.log1p(-plan.gamma_u * plan.p1)
  mu_u = C * lo_msg - s2 / 2.0
  mu_v = (C - 1) * lo_msg + hi_msg - s2 / 2.0
  return mu_u, mu_v


def empirical_privacy_violation(C: int, plan: NoisePlan, epsilon: float, n: int,
                                rng: np.random.Generator) -> float:
  """Monte Carlo estimate of ``P[log p_u(x) / p_v(x) > epsilon]`` for ``x ~ p_u``.

  Uses the worst-case adjacent pair. The result should not exceed
  ``delta`` beyond sampling error when the plan targets ``(epsilon, delta)``.
  """
  mu_u, mu_v = worst_case_log_means(C, plan)
  s2 = plan.sigma2_product(C)
  y = mu_u + math.sqrt(s2) * rng.standard_normal(n)  # log of the draws
  loss = ((y - mu_v)**2 - (y - mu_u)**2) / (2.0 * s2)
  return float(np.mean(loss > epsilon))
