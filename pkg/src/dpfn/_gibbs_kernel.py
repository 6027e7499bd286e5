"""Compiled inner loop of the clipped-likelihood Gibbs sampler.

Every trace is described by its duration triple, and per-user cumulative
sums make the log weight of each trace an O(1) lookup. Contacts are stored
twice in CSR form: by receiver (who can infect me) and by sender (whom I
can infect), the latter giving the term that couples a user's trace to the
transitions of its contacts.
"""

import numpy as np
from numba import njit

_NEG_INF = -np.inf


@njit(cache=True)
def _log_stay(k, log1m_p0, log1m_p1):
  return log1m_p0 + k * log1m_p1


@njit(cache=True)
def _log_leave(k, log1m_p0, log1m_p1):
  v = 1.0 - np.exp(log1m_p0 + k * log1m_p1)
  if v <= 0.0:
    return _NEG_INF
  return np.log(v)


@njit(cache=True)
def trace_states_at(d_s, d_e, d_i, t):
  if t < d_s:
    return 0
  if t < d_s + d_e:
    return 1
  if t < d_s + d_e + d_i:
    return 2
  return 3


@njit(cache=True)
def _segment_sums(x):
  """Prefix sums of the finite entries of ``x`` and prefix counts of its -inf entries.

  Differences of the two give any segment sum without inf - inf.
  """
  n = x.shape[0]
  f = np.zeros(n + 1)
  c = np.zeros(n + 1, dtype=np.int64)
  for t in range(n):
    if x[t] == _NEG_INF:
      f[t + 1] = f[t]
      c[t + 1] = c[t] + 1
    else:
      f[t + 1] = f[t] + x[t]
      c[t + 1] = c[t]
  return f, c


@njit(cache=True)
def conditional_log_weights(user, cur, tr_s, tr_e, tr_i, window, k_in,
                            in_ptr, in_slot, out_ptr, out_dst, out_slot,
                            obs_ptr, obs_day, obs_out, log_lik, log_prior,
                            log1m_p0, log1m_p1, log_g, log1m_g, log_h, log1m_h,
                            clip_b, out):
  """Fill ``out`` with the clipped log weight of every trace for ``user``.

  ``k_in[u, t]`` counts u's contacts on slot t that are infectious under the
  current traces. ``cur`` holds every user's current trace index.
  """
  n_tr = tr_s.shape[0]
  T = window
  # survival terms from incoming contacts
  cs = np.zeros(T)  # cs[t] = sum_{tau < t} log psi_tau
  leave = np.zeros(T)
  for t in range(T - 1):
    k = k_in[user, t]
    cs[t + 1] = cs[t] + _log_stay(k, log1m_p0, log1m_p1)
    leave[t] = _log_leave(k, log1m_p0, log1m_p1)

  # Coupling through outgoing contacts: per slot, the log probability of the
  # contacts' transitions if this user is I (with_i) or not (without_i).
  with_i = np.zeros(T)
  without_i = np.zeros(T)
  my_i = np.zeros(T)
  ct = cur[user]
  for t in range(T):
    my_i[t] = 1.0 if trace_states_at(tr_s[ct], tr_e[ct], tr_i[ct], t) == 2 else 0.0
  for idx in range(out_ptr[user], out_ptr[user + 1]):
    w = out_dst[idx]
    t = out_slot[idx]
    cw = cur[w]
    if trace_states_at(tr_s[cw], tr_e[cw], tr_i[cw], t) != 0:
      continue
    nw = trace_states_at(tr_s[cw], tr_e[cw], tr_i[cw], t + 1)
    k_rest = k_in[w, t] - my_i[t]
    if nw == 0:
      with_i[t] += _log_stay(k_rest + 1.0, log1m_p0, log1m_p1)
      without_i[t] += _log_stay(k_rest, log1m_p0, log1m_p1)
    else:
      with_i[t] += _log_leave(k_rest + 1.0, log1m_p0, log1m_p1)
      without_i[t] += _log_leave(k_rest, log1m_p0, log1m_p1)
  fa, na = _segment_sums(with_i)
  fb, nb = _segment_sums(without_i)

  # observation terms per state
  fo = np.zeros((4, T + 1))
  no = np.zeros((4, T + 1), dtype=np.int64)
  obs_day_vals = np.zeros(T)
  for s in range(4):
    for t in range(T):
      obs_day_vals[t] = 0.0
    for idx in range(obs_ptr[user], obs_ptr[user + 1]):
      obs_day_vals[obs_day[idx]] += log_lik[obs_out[idx], s]
    f, n = _segment_sums(obs_day_vals)
    fo[s] = f
    no[s] = n

  for j in range(n_tr):
    d_s = tr_s[j]
    d_e = tr_e[j]
    d_i = tr_i[j]
    end_e = d_s + d_e
    end_i = end_e + d_i
    first = trace_states_at(d_s, d_e, d_i, 0)
    lw = log_prior[first]
    if d_s > 0:
      lw += cs[d_s - 1]
      if d_s < T:
        if d_e > 0:
          lw += leave[d_s - 1]
        else:
          lw = _NEG_INF
    if d_e > 0:
      if d_e > 1:
        lw += (d_e - 1) * log1m_g
      if end_e < T:
        if d_i > 0:
          lw += log_g
        else:
          lw = _NEG_INF
    if d_i > 0:
      if d_i > 1:
        lw += (d_i - 1) * log1m_h
      if end_i < T:
        lw += log_h
    if lw == _NEG_INF:
      out[j] = _NEG_INF
      continue
    if (no[0, d_s] + (no[1, end_e] - no[1, d_s]) + (no[2, end_i] - no[2, end_e])
        + (no[3, T] - no[3, end_i]) + nb[end_e] + (na[end_i] - na[end_e])
        + (nb[T] - nb[end_i])) > 0:
      out[j] = _NEG_INF
      continue
    lw += fo[0, d_s] + (fo[1, end_e] - fo[1, d_s]) + (fo[2, end_i] - fo[2, end_e]) \
        + (fo[3, T] - fo[3, end_i])
    lw += fb[end_e] + (fa[end_i] - fa[end_e]) + (fb[T] - fb[end_i])
    if lw < -clip_b:
      lw = -clip_b
    elif lw > clip_b:
      lw = clip_b
    out[j] = lw


@njit(cache=True)
def sample_from_log_weights(logw, u):
  top = logw.max()
  total = 0.0
  n = logw.shape[0]
  cdf = np.empty(n)
  for j in range(n):
    if logw[j] == _NEG_INF:
      w = 0.0
    else:
      w = np.exp(logw[j] - top)
    total += w
    cdf[j] = total
  target = u * total
  for j in range(n):
    if cdf[j] > target:
      return j
  # u * total rounding up to total: last trace with positive weight
  for j in range(n - 1, -1, -1):
    if logw[j] != _NEG_INF:
      return j
  return n - 1


@njit(cache=True)
def run_chain(cur, tr_s, tr_e, tr_i, window, in_ptr, in_src, in_slot,
              out_ptr, out_dst, out_slot, obs_ptr, obs_day, obs_out, log_lik,
              log_prior, log1m_p0, log1m_p1, log_g, log1m_g, log_h, log1m_h,
              clip_b, uniforms, collect, state_counts):
  """Systematic-scan Gibbs sweeps.

  ``uniforms[s, u]`` drives user ``u``'s update in sweep ``s``. After every
  sweep with ``collect[s]`` set, ``state_counts[u, t, state]`` is increased
  for the sampled trace of each user. ``cur`` is updated in place.
  Returns the number of collected sweeps.
  """
  n_users = cur.shape[0]
  T = window
  k_in = np.zeros((n_users, T))
  for u in range(n_users):
    for idx in range(in_ptr[u], in_ptr[u + 1]):
      v = in_src[idx]
      t = in_slot[idx]
      cv = cur[v]
      if trace_states_at(tr_s[cv], tr_e[cv], tr_i[cv], t) == 2:
        k_in[u, t] += 1.0
  n_tr = tr_s.shape[0]
  logw = np.empty(n_tr)
  collected = 0
  for s in range(uniforms.shape[0]):
    for u in range(n_users):
      conditional_log_weights(u, cur, tr_s, tr_e, tr_i, T, k_in, in_ptr, in_slot,
                              out_ptr, out_dst, out_slot, obs_ptr, obs_day, obs_out,
                              log_lik, log_prior, log1m_p0, log1m_p1, log_g, log1m_g,
                              log_h, log1m_h, clip_b, logw)
      new = sample_from_log_weights(logw, uniforms[s, u])
      old = cur[u]
      if new != old:
        for idx in range(out_ptr[u], out_ptr[u + 1]):
          w = out_dst[idx]
          t = out_slot[idx]
          was = trace_states_at(tr_s[old], tr_e[old], tr_i[old], t) == 2
          now = trace_states_at(tr_s[new], tr_e[new], tr_i[new], t) == 2
          if was and not now:
            k_in[w, t] -= 1.0
          elif now and not was:
            k_in[w, t] += 1.0
        cur[u] = new
    if collect[s]:
      collected += 1
      for u in range(n_users):
        c = cur[u]
        for t in range(T):
          state_counts[u, t, trace_states_at(tr_s[c], tr_e[c], tr_i[c], t)] += 1.0
  return collected
