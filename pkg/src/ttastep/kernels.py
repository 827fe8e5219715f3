"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The two inner loops that dominate benchmark runtime outside of beam search
are the word edit-distance DP and the adaptation loss/gradient. Both ship
in two flavors:

  * a pure-numpy reference implementation (always available), and
  * a numba ``@njit`` twin compiled at import time.

Which flavor backs the public functions is chosen once at import from the
``TTASTEP_BACKEND`` environment variable:

  * ``auto``  (default) - numba if importable, else numpy
  * ``numba`` - require numba, raise if missing
  * ``numpy`` - force the pure-numpy path

``benchmarks/kernel_bench.py`` times the two flavors against each other.
"""

from __future__ import annotations

import os

import numpy as np

_BACKEND_ENV = "TTASTEP_BACKEND"

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def _resolve_backend() -> str:
    choice = os.environ.get(_BACKEND_ENV, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_BACKEND_ENV} must be one of auto/numba/numpy, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    if not HAS_NUMBA:
        if choice == "numba":
            raise RuntimeError(f"{_BACKEND_ENV}=numba but numba is not installed")
        return "numpy"
    return "numba"


_ACTIVE = _resolve_backend()


def active_backend() -> str:
    """Name of the kernel backend selected at import ('numba' or 'numpy')."""
    return _ACTIVE


# ---------------------------------------------------------------------------
# Edit distance over integer-encoded token sequences.
# ---------------------------------------------------------------------------


def levenshtein_numpy(a: np.ndarray, b: np.ndarray) -> int:
    """Unit-cost substitution/insertion/deletion distance, two-row DP."""
    n, m = a.shape[0], b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return int(prev[m])


# ---------------------------------------------------------------------------
# Adaptation loss: mean frame entropy + reweighted class-confusion mass,
# with the exact analytic gradient w.r.t. the logits.
# ---------------------------------------------------------------------------
#
# Forward, for logits z of shape (L, C) and temperature T:
#   p_l   = softmax(z_l / T)
#   H_l   = -sum_c p_lc log p_lc           frame entropies
#   ent   = mean_l H_l
#   u_l   = 1 + exp(-H_l)                  frame certainty weights
#   w_l   = L * u_l / sum(u)               scaled so sum(w) = L
#   M     = P^T diag(w) P                  (C, C) confusion matrix
#   R     = M / row_sums(M)                row-normalized
#   mcc   = off-diagonal mass of R / C  (= 1 - trace(R)/C)
#   value = lam_ent * ent + lam_mcc * mcc
#
# The gradient is reverse-mode by hand and flows through everything,
# including the certainty weights and the row normalization, so it matches
# central finite differences of the value exactly (to FD truncation error).


def suta_loss_grad_numpy(
    z: np.ndarray, temperature: float, lam_ent: float, lam_mcc: float
) -> tuple[float, np.ndarray]:
    L, C = z.shape
    a = z / temperature
    a_shift = a - a.max(axis=1, keepdims=True)
    e = np.exp(a_shift)
    denom = e.sum(axis=1, keepdims=True)
    p = e / denom
    logp = a_shift - np.log(denom)
    H = -(p * logp).sum(axis=1)
    ent = H.mean()

    u = 1.0 + np.exp(-H)
    s = u.sum()
    w = L * u / s
    M = (p * w[:, None]).T @ p
    r = M.sum(axis=1)
    R = M / r[:, None]
    mcc = (R.sum() - np.trace(R)) / C
    value = lam_ent * ent + lam_mcc * mcc

    # d value / d M, folding in the row normalization
    q = (lam_mcc / C) * (r - np.diag(M))
    G_M = (lam_mcc / C) * (1.0 - np.eye(C)) / r[:, None] - (q / (r * r))[:, None]

    # contributions through M: to the weights and to the frame posteriors
    g_w = np.einsum("lc,cd,ld->l", p, G_M, p)
    G_p = w[:, None] * (p @ (G_M + G_M.T))

    # weights: w = L*u/s, u = 1 + exp(-H)
    g_u = (L / s) * (g_w - (g_w @ u) / s)
    g_H = -np.exp(-H) * g_u + lam_ent / L

    # dH_l/da_lc = -p_lc (log p_lc + H_l); softmax backward for G_p
    ga = g_H[:, None] * (-(p * (logp + H[:, None])))
    ga += p * (G_p - (G_p * p).sum(axis=1, keepdims=True))
    return float(value), ga / temperature


if HAS_NUMBA:
    # twins are defined whenever numba is installed (compilation is lazy);
    # the env flag only decides which flavor the public names dispatch to
    from numba import njit

    @njit(cache=True)
    def _levenshtein_numba(a, b):  # pragma: no cover - exercised via dispatch
        n, m = a.shape[0], b.shape[0]
        if n == 0:
            return m
        if m == 0:
            return n
        prev = np.empty(m + 1, dtype=np.int64)
        cur = np.empty(m + 1, dtype=np.int64)
        for j in range(m + 1):
            prev[j] = j
        for i in range(1, n + 1):
            cur[0] = i
            ai = a[i - 1]
            for j in range(1, m + 1):
                cost = 0 if ai == b[j - 1] else 1
                best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                if prev[j - 1] + cost < best:
                    best = prev[j - 1] + cost
                cur[j] = best
            tmp = prev
            prev = cur
            cur = tmp
        return prev[m]

    # numpy error semantics: division by zero yields inf/nan instead of
    # raising, so a diverged model truncates the trajectory like numpy does
    @njit(cache=True, error_model="numpy")
    def _suta_loss_grad_numba(z, temperature, lam_ent, lam_mcc):  # pragma: no cover
        L, C = z.shape
        p = np.empty((L, C))
        logp = np.empty((L, C))
        H = np.empty(L)
        for l in range(L):
            mx = z[l, 0]
            for c in range(1, C):
                if z[l, c] > mx:
                    mx = z[l, c]
            mx = mx / temperature
            denom = 0.0
            for c in range(C):
                av = z[l, c] / temperature - mx
                logp[l, c] = av
                p[l, c] = np.exp(av)
                denom += p[l, c]
            ld = np.log(denom)
            h = 0.0
            for c in range(C):
                p[l, c] /= denom
                logp[l, c] -= ld
                h -= p[l, c] * logp[l, c]
            H[l] = h
        ent = H.sum() / L

        u = 1.0 + np.exp(-H)
        s = u.sum()
        w = L * u / s
        M = np.zeros((C, C))
        for l in range(L):
            for i in range(C):
                wp = w[l] * p[l, i]
                for j in range(C):
                    M[i, j] += wp * p[l, j]
        r = np.empty(C)
        trace_R = 0.0
        total_R = 0.0
        for i in range(C):
            ri = 0.0
            for j in range(C):
                ri += M[i, j]
            r[i] = ri
            trace_R += M[i, i] / ri
            total_R += 1.0  # each normalized row sums to one
        mcc = (total_R - trace_R) / C
        value = lam_ent * ent + lam_mcc * mcc

        G_M = np.empty((C, C))
        for i in range(C):
            qi = (lam_mcc / C) * (r[i] - M[i, i])
            base = qi / (r[i] * r[i])
            for j in range(C):
                off = lam_mcc / C if i != j else 0.0
                G_M[i, j] = off / r[i] - base

        Gsym = G_M + G_M.T
        g_w = np.empty(L)
        G_p = np.empty((L, C))
        for l in range(L):
            acc = 0.0
            for i in range(C):
                gi = 0.0
                si = 0.0
                for j in range(C):
                    gi += G_M[i, j] * p[l, j]
                    si += Gsym[i, j] * p[l, j]
                acc += p[l, i] * gi
                G_p[l, i] = w[l] * si
            g_w[l] = acc

        gwu = 0.0
        for l in range(L):
            gwu += g_w[l] * u[l]
        ga = np.empty((L, C))
        for l in range(L):
            g_u = (L / s) * (g_w[l] - gwu / s)
            g_H = -np.exp(-H[l]) * g_u + lam_ent / L
            dot = 0.0
            for c in range(C):
                dot += G_p[l, c] * p[l, c]
            for c in range(C):
                ga[l, c] = (
                    g_H * (-(p[l, c] * (logp[l, c] + H[l])))
                    + p[l, c] * (G_p[l, c] - dot)
                ) / temperature
        return value, ga

    def levenshtein_numba(a: np.ndarray, b: np.ndarray) -> int:
        return int(_levenshtein_numba(a, b))

    def suta_loss_grad_numba(z, temperature, lam_ent, lam_mcc):
        value, grad = _suta_loss_grad_numba(
            np.ascontiguousarray(z, dtype=np.float64),
            float(temperature),
            float(lam_ent),
            float(lam_mcc),
        )
        return float(value), grad


if _ACTIVE == "numba":
    levenshtein = levenshtein_numba
    suta_loss_grad = suta_loss_grad_numba
else:
    levenshtein = levenshtein_numpy
    suta_loss_grad = suta_loss_grad_numpy
