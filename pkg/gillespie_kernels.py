#!/usr/bin/env python3
"""
Compiled jump-chain kernels
Holding times and jump choices are read from pre-drawn blocks of standard
exponentials and uniforms, so the caller owns the random stream
"""

import numpy as np
from numba import njit

# Kernel exit codes
RAN_OUT_OF_DRAWS = 0
REACHED_HORIZON = 1
BUFFER_FULL = 2
HIT_TARGET = 3


def jump_tables(rates: np.ndarray, speedup: float):
    """
    Compressed rows of the jump chain.

    Returns (indptr, indices, cumprob, holding). cumprob holds the running
    sum of p(i, .) along each row with the last entry pinned to 1.
    """
    n = rates.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    indices, cumprob = [], []
    holding = speedup * rates.sum(axis=1)
    for i in range(n):
        cols = np.flatnonzero(rates[i])
        probs = np.cumsum(rates[i, cols]) / rates[i, cols].sum()
        probs[-1] = 1.0
        indices.append(cols)
        cumprob.append(probs)
        indptr[i + 1] = indptr[i] + cols.size
    return (indptr, np.concatenate(indices).astype(np.int64),
            np.concatenate(cumprob).astype(np.float64), holding.astype(np.float64))


@njit(nogil=True)
def _choose(state, u, indptr, indices, cumprob):
    # First transition whose running sum exceeds u; ties go to the lower index
    j = indptr[state]
    last = indptr[state + 1] - 1
    while j < last and cumprob[j] <= u:
        j += 1
    return indices[j]


@njit(nogil=True)
def run_events(state, t, horizon, jump_cap, indptr, indices, cumprob, holding,
               exps, unis, out_times, out_states):
    """
    Advance the chain recording every jump.

    Stops when the next jump would land at or after the horizon, when
    ``jump_cap`` jumps are written or when the draws run out. Returns
    (code, jumps written, state, time, draws used).
    """
    k = 0
    d = 0
    n_draws = exps.shape[0]
    cap = min(jump_cap, out_times.shape[0])
    while k < cap:
        if d >= n_draws:
            return RAN_OUT_OF_DRAWS, k, state, t, d
        t_next = t + exps[d] / holding[state]
        if t_next >= horizon:
            return REACHED_HORIZON, k, state, t, d + 1
        state = _choose(state, unis[d], indptr, indices, cumprob)
        d += 1
        t = t_next
        out_times[k] = t
        out_states[k] = state
        k += 1
    return BUFFER_FULL, k, state, t, d


@njit(nogil=True)
def run_projected(state, t, horizon, current, well_of, indptr, indices, cumprob, holding,
                  exps, unis, clock_wells, occupation, out_real, out_watched, out_labels):
    """
    Advance the chain keeping only well-label changes.

    ``well_of[i]`` is the well position of state i or -1 on the remainder;
    ``current`` is the last visited well. ``clock_wells`` is a one-element
    array with the time spent in the wells so far; ``occupation`` adds up
    time per state. A label change at real time t is written as
    (t, time in wells at t, new label). Returns
    (code, changes written, state, time, current, draws used, jumps).
    """
    k = 0
    d = 0
    jumps = 0
    n_draws = exps.shape[0]
    cap = out_real.shape[0]
    while k < cap:
        if d >= n_draws:
            return RAN_OUT_OF_DRAWS, k, state, t, current, d, jumps
        t_next = t + exps[d] / holding[state]
        if t_next >= horizon:
            dt = horizon - t
            occupation[state] += dt
            if well_of[state] >= 0:
                clock_wells[0] += dt
            return REACHED_HORIZON, k, state, horizon, current, d + 1, jumps
        dt = t_next - t
        occupation[state] += dt
        if well_of[state] >= 0:
            clock_wells[0] += dt
        state = _choose(state, unis[d], indptr, indices, cumprob)
        d += 1
        jumps += 1
        t = t_next
        w = well_of[state]
        if w >= 0 and w != current:
            out_real[k] = t
            out_watched[k] = clock_wells[0]
            out_labels[k] = w
            current = w
            k += 1
    return BUFFER_FULL, k, state, t, current, d, jumps


@njit(nogil=True)
def run_until_hit(state, t, target, indptr, indices, cumprob, holding, exps, unis):
    """
    Advance until a state with ``target[state]`` is entered.
    Returns (code, state, time, draws used).
    """
    d = 0
    n_draws = exps.shape[0]
    while d < n_draws:
        t += exps[d] / holding[state]
        state = _choose(state, unis[d], indptr, indices, cumprob)
        d += 1
        if target[state]:
            return HIT_TARGET, state, t, d
    return RAN_OUT_OF_DRAWS, state, t, d
