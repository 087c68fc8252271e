"""Hot numerical loops, jitted with numba.

Everything here works on plain arrays; model and matrix assembly stay in the
calling modules. The uniformized transition kernel is passed pre-scaled:
``diag_s``/``up_s``/``down_s`` (tridiagonal) or CSR ``data_s`` hold the entries
of L / Lambda, so one step of the power iteration is v <- v + v (L / Lambda)
and mass ratios are exactly the survival factors of the uniformized chain.

The in-kernel RNG is splitmix64: one uint64 of state per trajectory, uniform
doubles from the top 53 bits. Trajectory replay is deterministic per seed, so
failed batches (rate-table overflow) can be rerun selectively.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# splitmix64 constants
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _sm64_next(state):
    state = state + _SM_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _SM_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM_MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, inline="always")
def _sm64_unit(state):
    """(new_state, uniform in (0, 1])."""
    state, z = _sm64_next(state)
    return state, (float(z >> np.uint64(11)) + 1.0) * _INV_2_53


# ---------------------------------------------------------------------------
# power iteration blocks

@njit(cache=True)
def tridiag_left_power(diag_s, up_s, down_s, v, iters):
    """iters steps of v <- normalize(v P) for tridiagonal P - I = L/Lambda.

    v is modified in place (kept l1-normalized); returns the mean mass ratio
    ||v P||_1 over the block, whose defect from 1 estimates lambda0 / Lambda.
    """
    n = v.size
    out = np.empty(n)
    ratio_sum = 0.0
    for _ in range(iters):
        for i in range(n):
            acc = v[i] * diag_s[i]
            if i > 0:
                acc += v[i - 1] * up_s[i - 1]
            if i < n - 1:
                acc += v[i + 1] * down_s[i]
            out[i] = v[i] + acc
        s = 0.0
        for i in range(n):
            s += out[i]
        ratio_sum += s
        inv = 1.0 / s
        for i in range(n):
            v[i] = out[i] * inv
    return ratio_sum / iters


@njit(cache=True)
def tridiag_right_power(diag_s, up_s, down_s, w, iters):
    """iters steps of w <- normalize(P w) (right eigenvector side)."""
    n = w.size
    out = np.empty(n)
    ratio_sum = 0.0
    for _ in range(iters):
        for i in range(n):
            acc = w[i] * diag_s[i]
            if i > 0:
                acc += w[i - 1] * down_s[i - 1]
            if i < n - 1:
                acc += w[i + 1] * up_s[i]
            out[i] = w[i] + acc
        s = 0.0
        for i in range(n):
            s += out[i]
        ratio_sum += s
        inv = 1.0 / s
        for i in range(n):
            w[i] = out[i] * inv
    return ratio_sum / iters


@njit(cache=True)
def csr_left_power(indptr, indices, data_s, v, iters):
    """Left power block for general CSR (row i holds transitions FROM state i)."""
    n = v.size
    out = np.empty(n)
    ratio_sum = 0.0
    for _ in range(iters):
        for j in range(n):
            out[j] = v[j]
        for i in range(n):
            vi = v[i]
            if vi != 0.0:
                for p in range(indptr[i], indptr[i + 1]):
                    out[indices[p]] += vi * data_s[p]
        s = 0.0
        for j in range(n):
            s += out[j]
        ratio_sum += s
        inv = 1.0 / s
        for j in range(n):
            v[j] = out[j] * inv
    return ratio_sum / iters


@njit(cache=True)
def csr_right_power(indptr, indices, data_s, w, iters):
    n = w.size
    out = np.empty(n)
    ratio_sum = 0.0
    for _ in range(iters):
        for i in range(n):
            acc = w[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc += data_s[p] * w[indices[p]]
            out[i] = acc
        s = 0.0
        for i in range(n):
            s += out[i]
        ratio_sum += s
        inv = 1.0 / s
        for i in range(n):
            w[i] = out[i] * inv
    return ratio_sum / iters


# ---------------------------------------------------------------------------
# uniformized semigroup: acc = sum_j pmf[j] * mu0 P^j, no renormalization

@njit(cache=True)
def tridiag_evolve(diag_s, up_s, down_s, v0, pmf):
    n = v0.size
    acc = np.zeros(n)
    cur = v0.copy()
    out = np.empty(n)
    last = pmf.size - 1
    for j in range(last + 1):
        p = pmf[j]
        for i in range(n):
            acc[i] += p * cur[i]
        if j == last:
            break
        for i in range(n):
            a = cur[i] * diag_s[i]
            if i > 0:
                a += cur[i - 1] * up_s[i - 1]
            if i < n - 1:
                a += cur[i + 1] * down_s[i]
            out[i] = cur[i] + a
        cur, out = out, cur
    return acc


@njit(cache=True)
def csr_evolve(indptr, indices, data_s, v0, pmf):
    n = v0.size
    acc = np.zeros(n)
    cur = v0.copy()
    out = np.empty(n)
    last = pmf.size - 1
    for j in range(last + 1):
        p = pmf[j]
        for i in range(n):
            acc[i] += p * cur[i]
        if j == last:
            break
        for i in range(n):
            out[i] = cur[i]
        for i in range(n):
            vi = cur[i]
            if vi != 0.0:
                for q in range(indptr[i], indptr[i + 1]):
                    out[indices[q]] += vi * data_s[q]
        cur, out = out, cur
    return acc


# ---------------------------------------------------------------------------
# stochastic simulation of the 1D chain, batched

# trajectory status codes
ABSORBED = 0
SURVIVED = 1
TABLE_OVERFLOW = 2


@njit(cache=True)
def bdc_ssa_batch(b, d, a, x0, horizon, seeds, out_state, out_status):
    """Run one absorbed birth-death-catastrophe trajectory per seed.

    Rates are tabulated as b[k-1], d[k-1], a[k-1] for k = 1..len(b). A
    trajectory that outgrows the table stops with TABLE_OVERFLOW and can be
    replayed identically against a larger table (same seed, same path).
    """
    n_tab = b.size
    for i in range(seeds.size):
        s = seeds[i]
        k = x0[i]
        t = 0.0
        status = SURVIVED
        while True:
            if k > n_tab:
                status = TABLE_OVERFLOW
                break
            bk = b[k - 1]
            dk = d[k - 1]
            ak = a[k - 1]
            tot = bk + dk + ak
            if tot <= 0.0:
                break  # stuck alive in a rateless state until the horizon
            s, u1 = _sm64_unit(s)
            t += -np.log(u1) / tot
            if t >= horizon:
                break
            s, u2 = _sm64_unit(s)
            u = u2 * tot
            if u < bk:
                k += 1
            elif u < bk + dk:
                if k == 1:
                    status = ABSORBED
                    break
                k -= 1
            else:
                status = ABSORBED
                break
        out_state[i] = k
        out_status[i] = status
