"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def grid_dea_single_stage(X: np.ndarray, Y: np.ndarray, o: int, step: float = 1e-3) -> float:
    """Single-stage multiplier score with free intercept by brute force.

    Input weights are swept over the simplex with ``step``; for two
    outputs the output-weight direction is swept too. For every direction
    pair the remaining magnitude/intercept problem is one-dimensional and
    concave piecewise linear, so it is maximised exactly over the pairwise
    intersections of its pieces.
    """
    n, m = X.shape
    s = Y.shape[1]
    grid = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    if m != 2:
        raise ValueError("oracle expects two inputs")
    if s == 1:
        ydirs = np.ones((1, 1))
    elif s == 2:
        ydirs = np.column_stack([grid, 1 - grid])
    else:
        raise ValueError("oracle expects one or two outputs")
    best = -np.inf
    G = Y @ ydirs.T                      # (n, D): direction-weighted outputs
    go = G[o]                            # (D,)
    pairs = list(itertools.combinations(range(n), 2))
    pi_, pj_ = np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    for a in grid:
        nu = np.array([a, 1 - a])
        vx_o = X[o] @ nu
        if vx_o <= 0:
            continue
        c = (X @ nu) / vx_o              # normalised virtual inputs, c_o = 1
        # f(m) = m * go + min_i (c_i - m * G_i), m >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            num = c[pi_][:, None] - c[pj_][:, None]
            den = G[pi_] - G[pj_]
            ms = num / den
        ms = np.where(np.isfinite(ms) & (ms > 0), ms, 0.0)
        cand = np.vstack([np.zeros((1, G.shape[1])), ms])       # (P+1, D)
        vals = cand * go[None, :] + np.min(c[:, None, None] - cand[None, :, :] * G[:, None, :], axis=0)
        best = max(best, float(vals.max()))
    return best


def vertex_enumeration(c, A, rel, b, lo, hi) -> float:
    """Maximum of ``c x`` over a bounded polytope by checking every vertex."""
    n = len(c)
    rows, rhs, eq = [], [], []
    for a, r, v in zip(A, rel, b):
        sign = -1.0 if r == ">=" else 1.0
        rows.append(sign * np.asarray(a, float))
        rhs.append(sign * v)
        eq.append(r == "=")
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append(e)
        rhs.append(hi[j])
        eq.append(False)
        rows.append(-e)
        rhs.append(-lo[j])
        eq.append(False)
    R, h = np.array(rows), np.array(rhs)
    eq_idx = [i for i, e in enumerate(eq) if e]
    others = [i for i, e in enumerate(eq) if not e]
    best = -np.inf
    for combo in itertools.combinations(others, n - len(eq_idx)):
        idx = eq_idx + list(combo)
        M = R[idx]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[idx])
        if np.all(R @ x <= h + 1e-9) and all(abs(R[i] @ x - h[i]) <= 1e-9 for i in eq_idx):
            best = max(best, float(np.asarray(c) @ x))
    return best


def dummy_ols(y, X, units, periods, unit_effect=True, time_effect=True):
    """Slopes and residuals of OLS with explicit indicator columns."""
    parts = [np.ones((len(y), 1)), X]
    if unit_effect:
        u = np.unique(units)
        parts.append((units[:, None] == u[None, 1:]).astype(float))
    if time_effect:
        t = np.unique(periods)
        parts.append((periods[:, None] == t[None, 1:]).astype(float))
    D = np.hstack(parts)
    beta, *_ = np.linalg.lstsq(D, y, rcond=None)
    return beta[1:1 + X.shape[1]], y - D @ beta


def hc1(Xw, u, k):
    """Heteroskedasticity-robust covariance with the n/(n-k) correction."""
    n = len(u)
    bread = np.linalg.inv(Xw.T @ Xw)
    meat = (Xw * (u ** 2)[:, None]).T @ Xw
    return bread @ meat @ bread * n / (n - k)


_MASK64 = (1 << 64) - 1


def philox4x64_words(seed: int, n: int) -> list:
    """First ``n`` raw words of Philox4x64-10 keyed ``(seed, 0)``.

    Plain-integer transcription of the published round function; the
    counter is incremented before each block.
    """
    out, counter = [], 0
    while len(out) < n:
        counter += 1
        x = [counter & _MASK64, (counter >> 64) & _MASK64, 0, 0]
        k = [seed & _MASK64, 0]
        for _ in range(10):
            p0 = 0xD2E7470EE14C6C93 * x[0]
            p1 = 0xCA5A826395121157 * x[2]
            x = [(p1 >> 64) ^ x[1] ^ k[0], p1 & _MASK64, (p0 >> 64) ^ x[3] ^ k[1], p0 & _MASK64]
            k = [(k[0] + 0x9E3779B97F4A7C15) & _MASK64, (k[1] + 0xBB67AE8584CAA73B) & _MASK64]
        out.extend(x)
    return out[:n]
