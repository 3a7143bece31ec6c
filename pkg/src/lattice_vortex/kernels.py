"""Compiled proposal loops shared by the demon, Metropolis and fill drivers.

All loops act on physical psi (``psi = G * xi``) and the integer multiplicity
lattice ``m``.  A proposal is a flat plaquette id plus an orientation sign.
"""
import numpy as np
from numba import njit

DEMON = 0
METROPOLIS = 1
GREEDY = 2

# stats slots written by run_proposals
ST_ACCEPTED = 0
ST_REJ_ENERGY = 1
ST_REJ_Z2 = 2
ST_ED_SUM = 3
ST_ED_MIN = 4
ST_ED_MAX = 5
ST_S2_MAX = 6
ST_E_SUM = 7
N_STATS = 8


@njit(cache=True, nogil=True)
def _plaquette_geometry(pid, N):
    N3 = N * N * N
    plane = pid // N3
    r = pid - plane * N3
    i = r // (N * N)
    j = (r // N) % N
    k = r % N
    if plane == 0:
        a, b = 0, 1
    elif plane == 1:
        a, b = 1, 2
    else:
        a, b = 2, 0
    return a, b, i, j, k


@njit(cache=True, nogil=True)
def _shift(i, j, k, d, N):
    if d == 0:
        return (i + 1) % N, j, k
    elif d == 1:
        return i, (j + 1) % N, k
    return i, j, (k + 1) % N


@njit(cache=True, nogil=True)
def _add_response(psi, diffs, a, b, i, j, k, amp, N):
    # psi_a += amp * diffs_b(y - x); psi_b -= amp * diffs_a(y - x)
    for ii in range(N):
        si = ii - i
        if si < 0:
            si += N
        for jj in range(N):
            sj = jj - j
            if sj < 0:
                sj += N
            for kk in range(N):
                sk = kk - k
                if sk < 0:
                    sk += N
                psi[a, ii, jj, kk] += amp * diffs[b, si, sj, sk]
                psi[b, ii, jj, kk] -= amp * diffs[a, si, sj, sk]


@njit(cache=True, nogil=True)
def proposal_terms(m, psi, pid, sign, N, h3unit, self_energy):
    """(dE, d sum m^2) for applying plaquette ``pid`` with orientation ``sign``."""
    a, b, i, j, k = _plaquette_geometry(pid, N)
    ia, ja, ka = _shift(i, j, k, a, N)
    ib, jb, kb = _shift(i, j, k, b, N)
    cross = psi[a, i, j, k] + psi[b, ia, ja, ka] - psi[a, ib, jb, kb] - psi[b, i, j, k]
    mm = m[a, i, j, k] + m[b, ia, ja, ka] - m[a, ib, jb, kb] - m[b, i, j, k]
    dE = sign * h3unit * cross + self_energy
    dS2 = 4 + 2 * sign * mm
    return dE, dS2


@njit(cache=True, nogil=True)
def apply_move(m, psi, diffs, pid, sign, N, unit):
    a, b, i, j, k = _plaquette_geometry(pid, N)
    ia, ja, ka = _shift(i, j, k, a, N)
    ib, jb, kb = _shift(i, j, k, b, N)
    m[a, i, j, k] += sign
    m[b, ia, ja, ka] += sign
    m[a, ib, jb, kb] -= sign
    m[b, i, j, k] -= sign
    _add_response(psi, diffs, a, b, i, j, k, sign * unit, N)


@njit(cache=True, nogil=True)
def run_proposals(mode, m, psi, diffs, ids, signs, uniforms, scalars, s2_state,
                  params, stats, trace, trace_stride):
    """Run one batch of proposals in place.

    scalars: [e_state, e_demon]; s2_state: [sum m^2, s2_max]
    params: [N, unit, h3unit, self_energy, cap, beta, target]
    Returns the number of trace entries written.
    """
    N = int(params[0])
    unit = params[1]
    h3unit = params[2]
    self_energy = params[3]
    cap = params[4]
    beta = params[5]
    target = params[6]
    e_state = scalars[0]
    e_d = scalars[1]
    s2 = s2_state[0]
    s2_max = s2_state[1]
    n_trace = 0
    for t in range(ids.shape[0]):
        pid = ids[t]
        sign = signs[t]
        dE, dS2 = proposal_terms(m, psi, pid, sign, N, h3unit, self_energy)
        if s2 + dS2 > s2_max:
            stats[ST_REJ_Z2] += 1
            ok = False
        elif mode == DEMON:
            e_new = e_d - dE
            ok = e_new >= 0.0 and e_new <= cap
        elif mode == METROPOLIS:
            ok = dE <= 0.0 or uniforms[t] < np.exp(-beta * dE)
        else:
            ok = dE > 0.0 and e_state + dE <= target
        if ok:
            apply_move(m, psi, diffs, pid, sign, N, unit)
            e_state += dE
            if mode == DEMON:
                e_d -= dE
            s2 += dS2
            stats[ST_ACCEPTED] += 1
            if s2 > stats[ST_S2_MAX]:
                stats[ST_S2_MAX] = s2
        elif s2 + dS2 <= s2_max:
            stats[ST_REJ_ENERGY] += 1
        stats[ST_ED_SUM] += e_d
        stats[ST_E_SUM] += e_state
        if e_d < stats[ST_ED_MIN]:
            stats[ST_ED_MIN] = e_d
        if e_d > stats[ST_ED_MAX]:
            stats[ST_ED_MAX] = e_d
        if trace_stride > 0 and t % trace_stride == 0 and n_trace < trace.shape[0]:
            trace[n_trace] = e_d
            n_trace += 1
    scalars[0] = e_state
    scalars[1] = e_d
    s2_state[0] = s2
    return n_trace
