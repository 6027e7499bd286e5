"""Compiled forward-backward pass for many independent 4-state chains."""

import numpy as np
from numba import njit


@njit(cache=True)
def forward_backward_rows(surv, evidence, prior, g, h, post):
  """Fill ``post`` with per-row smoothed marginals.

  Returns the index of the first row whose evidence has zero probability,
  or -1 when every row normalizes.
  """
  num, window, _ = evidence.shape
  alpha = np.empty((window, 4))
  beta = np.empty(4)
  b = np.empty(4)
  for n in range(num):
    tot = 0.0
    for s in range(4):
      alpha[0, s] = prior[s] * evidence[n, 0, s]
      tot += alpha[0, s]
    if tot <= 0.0:
      return n
    for s in range(4):
      alpha[0, s] /= tot
    for t in range(window - 1):
      psi = surv[n, t]
      a0, a1, a2, a3 = alpha[t, 0], alpha[t, 1], alpha[t, 2], alpha[t, 3]
      alpha[t + 1, 0] = a0 * psi * evidence[n, t + 1, 0]
      alpha[t + 1, 1] = (a0 * (1.0 - psi) + a1 * (1.0 - g)) * evidence[n, t + 1, 1]
      alpha[t + 1, 2] = (a1 * g + a2 * (1.0 - h)) * evidence[n, t + 1, 2]
      alpha[t + 1, 3] = (a2 * h + a3) * evidence[n, t + 1, 3]
      tot = alpha[t + 1, 0] + alpha[t + 1, 1] + alpha[t + 1, 2] + alpha[t + 1, 3]
      if tot <= 0.0:
        return n
      for s in range(4):
        alpha[t + 1, s] /= tot
    for s in range(4):
      beta[s] = 1.0
      post[n, window - 1, s] = alpha[window - 1, s]
    for t in range(window - 2, -1, -1):
      for s in range(4):
        b[s] = beta[s] * evidence[n, t + 1, s]
      psi = surv[n, t]
      beta[0] = psi * b[0] + (1.0 - psi) * b[1]
      beta[1] = (1.0 - g) * b[1] + g * b[2]
      beta[2] = (1.0 - h) * b[2] + h * b[3]
      beta[3] = b[3]
      top = max(max(beta[0], beta[1]), max(beta[2], beta[3]))
      top = max(top, 1e-300)
      tot = 0.0
      for s in range(4):
        beta[s] /= top
        post[n, t, s] = alpha[t, s] * beta[s]
        tot += post[n, t, s]
      if tot <= 0.0:
        return n
      for s in range(4):
        post[n, t, s] /= tot
  return -1


@njit(cache=True)
def window_log_products(u, v, t, log_msg, first, log_prod, counts):
  """Accumulate log messages of in-window contacts per (receiver, slot).

  ``log_msg[v, slot + 1]`` is the log message of sender ``v`` for the
  contact day. Returns -1 on success or the position of the first contact
  with an unknown id.
  """
  num, n_slots = log_prod.shape
  for i in range(u.shape[0]):
    slot = t[i] - first
    if slot < 0 or slot >= n_slots:
      continue
    a = u[i]
    b = v[i]
    if a < 0 or a >= num or b < 0 or b >= num:
      return i
    log_prod[a, slot] += log_msg[b, slot + 1]
    counts[a, slot] += 1
  return -1
