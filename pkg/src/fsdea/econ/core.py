"""Numerical kernels: fixed-effect absorption, linear IV, cluster sandwich."""

from __future__ import annotations

import numpy as np

from ..exceptions import ConvergenceError, EstimationError

DEMEAN_TOL = 1e-10
MAX_SWEEPS = 10_000


def group_codes(labels) -> tuple:
    """Dense integer codes and the number of groups (sorted label order)."""
    uniq, codes = np.unique(np.asarray(labels), return_inverse=True)
    return codes.astype(np.int64), len(uniq)


def _subtract_group_means(A: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    sums = np.zeros((n_groups, A.shape[1]))
    np.add.at(sums, codes, A)
    return sums[codes] / counts[codes][:, None]


def demean(A, unit_codes=None, time_codes=None, tol: float = DEMEAN_TOL, max_sweeps: int = MAX_SWEEPS):
    """Absorb unit and/or time effects by alternating projections.

    ``A`` is (n, k). Pass ``None`` for an effect that is switched off.
    Iterates until the largest cell change within a sweep is below ``tol``.
    """
    A = np.array(A, dtype=float, copy=True)
    if A.ndim == 1:
        return demean(A[:, None], unit_codes, time_codes, tol, max_sweeps)[:, 0]
    effects = [(np.asarray(c), int(np.max(c)) + 1) for c in (unit_codes, time_codes)
               if c is not None and len(c)]
    if not effects or A.size == 0:
        return A
    if len(effects) == 1:
        codes, g = effects[0]
        return A - _subtract_group_means(A, codes, g)
    for _ in range(max_sweeps):
        change = 0.0
        for codes, g in effects:
            m = _subtract_group_means(A, codes, g)
            A -= m
            change = max(change, float(np.max(np.abs(m))))
        if change < tol:
            return A
    raise ConvergenceError(f"demeaning did not converge within {max_sweeps} sweeps")


def absorbed_dof(unit_codes=None, time_codes=None) -> int:
    """Parameters absorbed by the fixed effects (excluding the constant)."""
    k = 0
    if unit_codes is not None:
        k += len(np.unique(unit_codes)) - 1
    if time_codes is not None:
        k += len(np.unique(time_codes)) - 1
    return k


def check_rank(X: np.ndarray, names, raw: np.ndarray | None = None, what: str = "regressors") -> None:
    """Raise if a column was absorbed by the fixed effects or the columns are collinear."""
    if X.shape[1] == 0:
        return
    if X.shape[0] <= X.shape[1]:
        raise EstimationError(f"{X.shape[0]} observations cannot identify {X.shape[1]} {what}")
    norms = np.linalg.norm(X, axis=0)
    ref = np.linalg.norm(raw - raw.mean(axis=0), axis=0) if raw is not None else norms
    ref = np.where(ref > 0, ref, 1.0)
    dead = [names[j] for j in range(X.shape[1]) if norms[j] <= 1e-9 * ref[j] or norms[j] == 0]
    if dead:
        raise EstimationError(f"perfect collinearity: {', '.join(dead)} absorbed by the fixed effects "
                              f"or constant")
    Xs = X / norms
    _, s, vt = np.linalg.svd(Xs, full_matrices=False)
    if s[-1] <= 1e-10 * s[0]:
        null = np.abs(vt[-1])
        involved = [names[j] for j in range(len(names)) if null[j] > 1e-6]
        raise EstimationError(f"perfect collinearity among {', '.join(involved)}")


def cluster_meat(S: np.ndarray, clusters: np.ndarray, n_clusters: int) -> np.ndarray:
    """Sum over clusters of the outer product of within-cluster score sums."""
    sums = np.zeros((n_clusters, S.shape[1]))
    np.add.at(sums, clusters, S)
    return sums.T @ sums


def cr1_factor(n: int, k: int, g: int) -> float:
    if g < 2:
        raise EstimationError("cluster-robust covariance needs at least two clusters")
    if n <= k:
        raise EstimationError("not enough observations for the small-sample correction")
    return g / (g - 1) * (n - 1) / (n - k)


def linear_iv(y: np.ndarray, X: np.ndarray, Z: np.ndarray | None = None) -> tuple:
    """2SLS of ``y`` on ``X`` with instruments ``Z`` (OLS when ``Z`` is None).

    Returns ``(beta, Xhat, resid)`` where ``Xhat`` is the projection of
    ``X`` on the instrument space and ``resid = y - X beta``.
    """
    if Z is None:
        Xhat = X
    else:
        coef, *_ = np.linalg.lstsq(Z, X, rcond=None)
        Xhat = Z @ coef
    beta, *_ = np.linalg.lstsq(Xhat, y, rcond=None)
    return beta, Xhat, y - X @ beta


def sandwich(Xhat: np.ndarray, resid: np.ndarray, clusters: np.ndarray, n_clusters: int) -> np.ndarray:
    """CR1 covariance ``(X'X)^-1 meat (X'X)^-1`` for projected regressors."""
    n, k = Xhat.shape
    bread = np.linalg.inv(Xhat.T @ Xhat)
    meat = cluster_meat(Xhat * resid[:, None], clusters, n_clusters)
    V = bread @ meat @ bread * cr1_factor(n, k, n_clusters)
    return (V + V.T) / 2
