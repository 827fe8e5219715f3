"""Independent reference implementations the tests check the package against.

Everything here is deliberately written along a different computational
route than the code under test: CTC probabilities come from exhaustive path
enumeration, edit distances from a branch-and-bound search over edit
scripts, forwards from a naive triple loop.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*a, **k):
        def wrap(fn):
            return fn

        return wrap if not (len(a) == 1 and callable(a[0])) else a[0]


def collapse_groupby(path, blank: int) -> tuple[int, ...]:
    """CTC collapse via itertools.groupby (merge runs, drop blanks)."""
    return tuple(k for k, _ in itertools.groupby(path) if k != blank)


def ctc_sequence_probs(logp: np.ndarray, blank: int) -> dict[tuple[int, ...], float]:
    """Exact probability of every collapsed sequence by enumerating all
    C^T frame paths. Only viable for tiny instances."""
    T, C = logp.shape
    probs: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(C), repeat=T):
        p = math.exp(sum(logp[t, c] for t, c in enumerate(path)))
        seq = collapse_groupby(path, blank)
        probs[seq] = probs.get(seq, 0.0) + p
    return probs


def best_sequence(probs: dict[tuple[int, ...], float]) -> tuple[tuple[int, ...], float]:
    """Argmax with lexicographic tie-break, matching the decoder contract."""
    best = min(probs.items(), key=lambda kv: (-kv[1], kv[0]))
    return best[0], best[1]


def naive_forward(x: np.ndarray, gamma, b, W, c) -> np.ndarray:
    """Triple-loop evaluation of ((gamma*x + b) @ W + c)."""
    L, F = x.shape
    C = W.shape[1]
    out = np.zeros((L, C))
    for l in range(L):
        for j in range(C):
            acc = c[j]
            for f in range(F):
                acc += (gamma[f] * x[l, f] + b[f]) * W[f, j]
            out[l, j] = acc
    return out


@njit(cache=True)
def _edit_script_search(a, b):  # pragma: no cover - numba-compiled
    """Branch-and-bound DFS over edit scripts (match/sub, delete, insert)."""
    n, m = a.shape[0], b.shape[0]
    best = n + m  # all-delete + all-insert script always exists
    # manual stack of (i, j, cost)
    cap = 4 * (n + m + 2)
    stack_i = np.empty(cap, dtype=np.int64)
    stack_j = np.empty(cap, dtype=np.int64)
    stack_c = np.empty(cap, dtype=np.int64)
    top = 0
    stack_i[top], stack_j[top], stack_c[top] = 0, 0, 0
    top += 1
    while top > 0:
        top -= 1
        i, j, cost = stack_i[top], stack_j[top], stack_c[top]
        if cost >= best:
            continue
        if i == n and j == m:
            best = cost
            continue
        if top + 3 >= cap:
            grow = cap * 2
            ni = np.empty(grow, dtype=np.int64)
            nj = np.empty(grow, dtype=np.int64)
            nc = np.empty(grow, dtype=np.int64)
            ni[:cap] = stack_i
            nj[:cap] = stack_j
            nc[:cap] = stack_c
            stack_i, stack_j, stack_c = ni, nj, nc
            cap = grow
        # explore the cheap diagonal move last so it pops first
        if i < n:  # delete a[i]
            stack_i[top], stack_j[top], stack_c[top] = i + 1, j, cost + 1
            top += 1
        if j < m:  # insert b[j]
            stack_i[top], stack_j[top], stack_c[top] = i, j + 1, cost + 1
            top += 1
        if i < n and j < m:  # match or substitute
            step = 0 if a[i] == b[j] else 1
            stack_i[top], stack_j[top], stack_c[top] = i + 1, j + 1, cost + step
            top += 1
    return best


def edit_script_search(a, b) -> int:
    return int(
        _edit_script_search(
            np.asarray(a, dtype=np.int32), np.asarray(b, dtype=np.int32)
        )
    )


def central_diff_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function over an array."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
        it.iternext()
    return g
