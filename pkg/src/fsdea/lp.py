"""Dense bounded-variable revised simplex.

The solver works on ``maximize c'x  s.t.  A x (<=|=|>=) b,  l <= x <= u``.
Every row receives a logical (slack) column whose bounds encode the row
relation, so the working system is ``[A I] (x, s) = b`` with all columns
bounded (possibly by infinities). Free structural variables are kept as
free columns instead of being split, so their sign is reported directly.

Phase 1 minimises the sum of bound infeasibilities of the basic variables
with a long-step ratio test that passes breakpoints while the phase-1
objective still improves. Phase 2 uses Dantzig pricing and falls back to
Bland's rule after a run of degenerate pivots. The basis is factored in
block form around its logical columns, so only the square block of
basic structural columns is ever inverted; at DEA sizes (tens of
structural columns, hundreds of rows) that block stays tiny.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

FEASIBILITY_TOL = 1e-8
OPTIMALITY_TOL = 1e-9
ITERATION_LIMIT = 50_000
BLAND_AFTER = 50
REINVERT_EVERY = 100
PIVOT_TOL = 1e-9
POLISH_TOL = 1e-12

RELATIONS = ("<=", "=", ">=")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT_STATUS = "iteration-limit"

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """A maximisation LP held as dense arrays.

    Use :meth:`from_rows` to build one from sparse ``{name: coef}`` maps.
    """

    variable_names: tuple
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    A: np.ndarray
    relations: tuple
    rhs: np.ndarray
    constraint_names: tuple
    name: str = "lp"

    def __post_init__(self):
        n = len(self.variable_names)
        m = len(self.constraint_names)
        if len(set(self.variable_names)) != n:
            raise ValueError("duplicate variable names")
        if self.A.shape != (m, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(m, n)}")
        for arr, label in ((self.lower, "lower"), (self.upper, "upper"), (self.objective, "objective")):
            if arr.shape != (n,):
                raise ValueError(f"{label} must have length {n}")
        if self.rhs.shape != (m,) or len(self.relations) != m:
            raise ValueError("rhs/relations must have one entry per constraint")
        bad = [r for r in self.relations if r not in RELATIONS]
        if bad:
            raise ValueError(f"unknown relation {bad[0]!r}")
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise ValueError(f"variable {self.variable_names[j]!r} has lower > upper")
        if np.any(np.isnan(self.A)) or np.any(np.isnan(self.rhs)) or np.any(np.isnan(self.objective)):
            raise ValueError("LP data contains NaN")

    @classmethod
    def from_rows(
        cls,
        variables: Sequence[tuple],
        objective: Mapping[str, float],
        constraints: Iterable[tuple],
        name: str = "lp",
    ) -> "LinearProgram":
        """Build from ``(name, lower, upper)`` variables and
        ``(name, {var: coef}, relation, rhs)`` constraints."""
        names = tuple(v[0] for v in variables)
        index = {v: j for j, v in enumerate(names)}
        lower = np.array([v[1] for v in variables], dtype=float)
        upper = np.array([v[2] for v in variables], dtype=float)
        c = np.zeros(len(names))
        for var, coef in objective.items():
            if var not in index:
                raise ValueError(f"objective references undeclared variable {var!r}")
            c[index[var]] = coef
        rows, rels, rhs, cnames = [], [], [], []
        for cname, coefs, rel, b in constraints:
            row = np.zeros(len(names))
            for var, coef in coefs.items():
                if var not in index:
                    raise ValueError(f"constraint {cname!r} references undeclared variable {var!r}")
                row[index[var]] += coef
            rows.append(row)
            rels.append(rel)
            rhs.append(float(b))
            cnames.append(cname)
        A = np.array(rows, dtype=float).reshape(len(rows), len(names))
        return cls(names, lower, upper, c, A, tuple(rels), np.array(rhs, dtype=float), tuple(cnames), name)

    @property
    def n_variables(self) -> int:
        return len(self.variable_names)

    @property
    def n_constraints(self) -> int:
        return len(self.constraint_names)

    def constraint(self, i: int) -> dict:
        """Sparse view of constraint ``i``."""
        row = self.A[i]
        coefs = {self.variable_names[j]: float(row[j]) for j in np.flatnonzero(row)}
        return {"name": self.constraint_names[i], "coefficients": coefs,
                "relation": self.relations[i], "rhs": float(self.rhs[i])}

    def scale_row(self, i: int, factor: float) -> "LinearProgram":
        """Copy with constraint ``i`` multiplied by ``factor > 0``."""
        if factor <= 0:
            raise ValueError("factor must be positive")
        A = self.A.copy()
        rhs = self.rhs.copy()
        A[i] *= factor
        rhs[i] *= factor
        return LinearProgram(self.variable_names, self.lower, self.upper, self.objective,
                             A, self.relations, rhs, self.constraint_names, self.name)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at point ``x``."""
        ax = self.A @ x
        viol = [0.0]
        rel = np.array(self.relations)
        if len(rel):
            le, eq, ge = rel == "<=", rel == "=", rel == ">="
            viol.append(np.max(np.where(le, ax - self.rhs, 0.0), initial=0.0))
            viol.append(np.max(np.where(ge, self.rhs - ax, 0.0), initial=0.0))
            viol.append(np.max(np.where(eq, np.abs(ax - self.rhs), 0.0), initial=0.0))
        viol.append(np.max(self.lower - x, initial=0.0))
        viol.append(np.max(x - self.upper, initial=0.0))
        return float(max(viol))


@dataclass
class LpSolution:
    status: str
    objective: float = float("nan")
    values: dict = field(default_factory=dict)
    iterations: int = 0
    x: np.ndarray | None = None
    duals: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _slack_bounds(relations):
    lo = np.empty(len(relations))
    hi = np.empty(len(relations))
    for i, rel in enumerate(relations):
        if rel == "<=":
            lo[i], hi[i] = 0.0, np.inf
        elif rel == ">=":
            lo[i], hi[i] = -np.inf, 0.0
        else:
            lo[i], hi[i] = 0.0, 0.0
    return lo, hi


class _Simplex:
    def __init__(self, A, b, c, lo, hi, feas_tol, opt_tol, iteration_limit):
        self.A = A
        self.b = b
        m, n = A.shape
        self.m, self.n = m, n
        self.c = c
        self.lo, self.hi = lo, hi
        self.feas_tol, self.opt_tol = feas_tol, opt_tol
        self.iteration_limit = iteration_limit
        self.iterations = 0
        self.pivots_since_reinvert = 0
        self.degenerate_run = 0

        self.state = np.empty(n + m, dtype=np.int8)
        self.x = np.zeros(n + m)
        for j in range(n + m):
            if np.isfinite(lo[j]):
                self.state[j], self.x[j] = _AT_LOWER, lo[j]
            elif np.isfinite(hi[j]):
                self.state[j], self.x[j] = _AT_UPPER, hi[j]
            else:
                self.state[j], self.x[j] = _FREE, 0.0
        self.basis = np.arange(n, n + m)
        self.state[self.basis] = _BASIC
        self.fixed = hi - lo <= 0.0
        self.factor()
        self.x[self.basis] = b - A @ self.x[:n]

    # The basis matrix is a column permutation of [A_T | I_S]: unit columns
    # of basic logicals plus the structural columns T. Only the square block
    # M = A[rows not covered by logicals, T] needs inverting, so every solve
    # costs O(m k + k^3) with k = number of basic structurals.
    def factor(self):
        n, m = self.n, self.m
        is_slack = self.basis >= n
        self.pos_T = np.flatnonzero(~is_slack)
        self.pos_S = np.flatnonzero(is_slack)
        self.rows_S = self.basis[self.pos_S] - n
        free_rows = np.ones(m, dtype=bool)
        free_rows[self.rows_S] = False
        self.rows_T = np.flatnonzero(free_rows)
        cols_T = self.basis[self.pos_T]
        self.Minv = np.linalg.inv(self.A[np.ix_(self.rows_T, cols_T)]) if cols_T.size else np.zeros((0, 0))
        self.A_ST = self.A[np.ix_(self.rows_S, cols_T)]
        self.row_to_T = np.full(m, -1)
        self.row_to_T[self.rows_T] = np.arange(self.rows_T.size)
        self.row_to_pos = np.full(m, -1)
        self.row_to_pos[self.rows_S] = self.pos_S
        self.pivots_since_reinvert = 0

    def ftran_vec(self, a):
        alpha = np.empty(self.m)
        a_T = self.Minv @ a[self.rows_T]
        alpha[self.pos_T] = a_T
        alpha[self.pos_S] = a[self.rows_S] - self.A_ST @ a_T
        return alpha

    def ftran(self, j):
        if j < self.n:
            return self.ftran_vec(self.A[:, j])
        i = j - self.n
        alpha = np.zeros(self.m)
        if self.row_to_pos[i] >= 0:
            alpha[self.row_to_pos[i]] = 1.0
            return alpha
        a_T = self.Minv[:, self.row_to_T[i]]
        alpha[self.pos_T] = a_T
        alpha[self.pos_S] = -(self.A_ST @ a_T)
        return alpha

    def btran(self, cb):
        y = np.empty(self.m)
        c_S = cb[self.pos_S]
        y[self.rows_S] = c_S
        y[self.rows_T] = self.Minv.T @ (cb[self.pos_T] - self.A_ST.T @ c_S)
        return y

    def reinvert(self):
        self.factor()
        nonbasic = self.state != _BASIC
        xn = np.where(nonbasic, self.x, 0.0)
        resid = self.b - self.A @ xn[: self.n] - xn[self.n:]
        self.x[self.basis] = self.ftran_vec(resid)

    def reduced_costs(self, cb):
        y = self.btran(cb)
        d = np.concatenate([self.c_active[: self.n] - y @ self.A, self.c_active[self.n:] - y])
        return d, y

    def choose_entering(self, d, bland):
        st = self.state
        up = ((st == _AT_LOWER) | (st == _FREE)) & (d > self.opt_tol)
        down = ((st == _AT_UPPER) | (st == _FREE)) & (d < -self.opt_tol)
        eligible = (up | down) & ~self.fixed
        if not eligible.any():
            return -1, 0
        if bland:
            j = int(np.flatnonzero(eligible)[0])
        else:
            score = np.where(eligible, np.abs(d), -1.0)
            j = int(np.argmax(score))
        return j, (1 if up[j] else -1)

    def infeasibility(self):
        xb = self.x[self.basis]
        lob, hib = self.lo[self.basis], self.hi[self.basis]
        below = xb < lob - self.feas_tol
        above = xb > hib + self.feas_tol
        return below, above

    def pivot(self, r, j, alpha, leave_state):
        leaving = self.basis[r]
        self.state[leaving] = leave_state
        self.x[leaving] = self.lo[leaving] if leave_state == _AT_LOWER else self.hi[leaving]
        self.basis[r] = j
        self.state[j] = _BASIC
        if self.pivots_since_reinvert + 1 >= REINVERT_EVERY:
            self.reinvert()
        else:
            self.factor()
            self.pivots_since_reinvert += 1

    def step_phase1(self, bland):
        below, above = self.infeasibility()
        cb = np.where(below, 1.0, np.where(above, -1.0, 0.0))
        d, _ = self.reduced_costs(cb)
        j, direction = self.choose_entering(d, bland)
        if j < 0:
            return INFEASIBLE
        alpha = self.ftran(j)
        rate = -direction * alpha
        xb = self.x[self.basis]
        lob, hib = self.lo[self.basis], self.hi[self.basis]

        # breakpoints: (t, slope drop, basis row or -1, state after leaving)
        ts, drops, rows, kinds = [], [], [], []
        big = np.abs(rate) > PIVOT_TOL
        for i in np.flatnonzero(big):
            ri = rate[i]
            if ri > 0:
                if below[i]:
                    ts.append((lob[i] - xb[i]) / ri); drops.append(ri); rows.append(i); kinds.append(_AT_LOWER)
                    if np.isfinite(hib[i]):
                        ts.append((hib[i] - xb[i]) / ri); drops.append(ri); rows.append(i); kinds.append(_AT_UPPER)
                elif not above[i] and np.isfinite(hib[i]):
                    ts.append(max((hib[i] - xb[i]) / ri, 0.0)); drops.append(ri); rows.append(i); kinds.append(_AT_UPPER)
            else:
                if above[i]:
                    ts.append((hib[i] - xb[i]) / ri); drops.append(-ri); rows.append(i); kinds.append(_AT_UPPER)
                    if np.isfinite(lob[i]):
                        ts.append((lob[i] - xb[i]) / ri); drops.append(-ri); rows.append(i); kinds.append(_AT_LOWER)
                elif not below[i] and np.isfinite(lob[i]):
                    ts.append(max((lob[i] - xb[i]) / ri, 0.0)); drops.append(-ri); rows.append(i); kinds.append(_AT_LOWER)
        span = self.hi[j] - self.lo[j]
        if np.isfinite(span):
            ts.append(span); drops.append(np.inf); rows.append(-1); kinds.append(-1)
        if not ts:
            return INFEASIBLE
        ts = np.asarray(ts)
        drops_arr = np.asarray(drops)
        order = np.lexsort((-np.minimum(drops_arr, 1e300), ts))
        slope = abs(d[j])
        stop = 1e-12 * max(1.0, slope)
        chosen = order[-1]
        for k in order:
            slope -= drops_arr[k]
            if slope <= stop:
                chosen = k
                break
        t = ts[chosen]
        self.apply_step(j, direction, alpha, t, rows[chosen], kinds[chosen])
        return None

    def apply_step(self, j, direction, alpha, t, r, leave_state):
        self.x[self.basis] += -direction * alpha * t
        self.x[j] += direction * t
        if t <= 1e-12:
            self.degenerate_run += 1
        else:
            self.degenerate_run = 0
        if r < 0:
            # bound flip of the entering variable, basis unchanged
            self.state[j] = _AT_UPPER if direction > 0 else _AT_LOWER
            self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
            return
        self.pivot(r, j, alpha, leave_state)

    def step_phase2(self, bland):
        d, _ = self.reduced_costs(self.c_active[self.basis])
        j, direction = self.choose_entering(d, bland)
        if j < 0:
            return OPTIMAL
        alpha = self.ftran(j)
        rate = -direction * alpha
        xb = self.x[self.basis]
        lob, hib = self.lo[self.basis], self.hi[self.basis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where((rate > PIVOT_TOL) & np.isfinite(hib), (hib - xb) / rate, np.inf)
            t_dn = np.where((rate < -PIVOT_TOL) & np.isfinite(lob), (lob - xb) / rate, np.inf)
        t_rows = np.maximum(np.minimum(t_up, t_dn), 0.0)
        t_min = t_rows.min() if t_rows.size else np.inf
        span = self.hi[j] - self.lo[j]
        if not np.isfinite(t_min) and not np.isfinite(span):
            return UNBOUNDED
        if span <= t_min:
            self.apply_step(j, direction, alpha, span, -1, -1)
            return None
        ties = np.flatnonzero(t_rows <= t_min + 1e-12)
        if bland:
            r = int(ties[np.argmin(self.basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(alpha[ties]))])
        leave_state = _AT_UPPER if t_up[r] <= t_dn[r] else _AT_LOWER
        self.apply_step(j, direction, alpha, t_rows[r], r, leave_state)
        return None

    def run(self):
        # phase 1
        self.c_active = np.zeros(self.n + self.m)
        while True:
            below, above = self.infeasibility()
            if not (below.any() or above.any()):
                break
            if self.iterations >= self.iteration_limit:
                return ITERATION_LIMIT_STATUS
            status = self.step_phase1(self.degenerate_run >= BLAND_AFTER)
            self.iterations += 1
            if status is not None:
                self.reinvert()
                below, above = self.infeasibility()
                if below.any() or above.any():
                    return INFEASIBLE
                break
        # phase 2
        self.c_active = self.c
        self.degenerate_run = 0
        while True:
            if self.iterations >= self.iteration_limit:
                return ITERATION_LIMIT_STATUS
            status = self.step_phase2(self.degenerate_run >= BLAND_AFTER)
            if status is not None:
                return status
            self.iterations += 1


def solve(
    lp: LinearProgram,
    feasibility_tol: float = FEASIBILITY_TOL,
    optimality_tol: float = OPTIMALITY_TOL,
    iteration_limit: int = ITERATION_LIMIT,
) -> LpSolution:
    """Solve ``lp``; deterministic for fixed input and options."""
    A, b, rel = lp.A, lp.rhs, lp.relations
    keep = np.any(A != 0.0, axis=1)
    if not keep.all():
        for i in np.flatnonzero(~keep):
            ok = (rel[i] == "<=" and b[i] >= -feasibility_tol) or \
                 (rel[i] == ">=" and b[i] <= feasibility_tol) or \
                 (rel[i] == "=" and abs(b[i]) <= feasibility_tol)
            if not ok:
                return LpSolution(INFEASIBLE)
        A, b = A[keep], b[keep]
        rel = tuple(r for r, k in zip(rel, keep) if k)
    slo, shi = _slack_bounds(rel)
    lo = np.concatenate([lp.lower, slo])
    hi = np.concatenate([lp.upper, shi])
    c = np.concatenate([lp.objective, np.zeros(len(rel))])
    sx = _Simplex(A, b, c, lo, hi, feasibility_tol, optimality_tol, iteration_limit)
    status = sx.run()
    if status == OPTIMAL:
        sx.reinvert()
        _polish(sx, feasibility_tol)
        # refine: basic values recomputed from a fresh inverse; values within
        # the feasibility tolerance outside a bound are snapped onto it
        x = np.clip(sx.x[: lp.n_variables], lp.lower, lp.upper)
        y_kept = sx.btran(c[sx.basis])
        duals = np.zeros(lp.n_constraints)
        duals[keep] = y_kept
        obj = float(lp.objective @ x)
        values = dict(zip(lp.variable_names, x.tolist()))
        return LpSolution(OPTIMAL, obj, values, sx.iterations, x, duals)
    if status == ITERATION_LIMIT_STATUS:
        x = sx.x[: lp.n_variables].copy()
        return LpSolution(status, float(lp.objective @ x), dict(zip(lp.variable_names, x.tolist())),
                          sx.iterations, x)
    return LpSolution(status, iterations=sx.iterations)


def _polish(sx: _Simplex, feasibility_tol: float) -> None:
    """Re-enter the simplex from the optimal basis with a tighter feasibility
    tolerance so that bound slips accepted on the way are repaired; keeps the
    first answer if the second pass does not end optimal."""
    tight = min(POLISH_TOL, feasibility_tol)
    xb = sx.x[sx.basis]
    slip = np.maximum(sx.lo[sx.basis] - xb, xb - sx.hi[sx.basis])
    if not slip.size or slip.max() <= tight:
        return
    saved = (sx.basis.copy(), sx.state.copy(), sx.x.copy(), sx.iterations)
    sx.feas_tol = tight
    ok = sx.run() == OPTIMAL
    sx.feas_tol = feasibility_tol
    if ok:
        sx.reinvert()
        return
    sx.basis, sx.state, sx.x, sx.iterations = saved
    sx.factor()


def _fmt_num(v: float) -> str:
    s = f"{v:.12g}"
    return s if len(s) <= 12 else f"{v:.6e}"


def to_mps(lp: LinearProgram) -> str:
    """Render ``lp`` in fixed-layout MPS.

    Names longer than eight characters are replaced by positional codes
    (``C0001``, ``R0001``); the mapping is written as ``*`` comment lines.
    The objective sense is emitted in an ``OBJSENSE`` section.
    """
    def short(names, prefix):
        if all(len(nm) <= 8 and " " not in nm for nm in names):
            return list(names)
        return [f"{prefix}{k + 1:04d}" for k in range(len(names))]

    cols = short(lp.variable_names, "C")
    rows = short(lp.constraint_names, "R")
    out = [f"* {lp.name}"]
    for orig, code in zip(lp.variable_names, cols):
        if orig != code:
            out.append(f"* {code} = {orig}")
    for orig, code in zip(lp.constraint_names, rows):
        if orig != code:
            out.append(f"* {code} = {orig}")
    out.append(f"NAME          {lp.name[:8]}")
    out.append("OBJSENSE")
    out.append("    MAX")
    out.append("ROWS")
    out.append(" N  OBJ")
    kind = {"<=": "L", ">=": "G", "=": "E"}
    for r, rel in zip(rows, lp.relations):
        out.append(f" {kind[rel]}  {r}")
    out.append("COLUMNS")
    for j, cname in enumerate(cols):
        entries = []
        if lp.objective[j] != 0:
            entries.append(("OBJ", lp.objective[j]))
        for i in np.flatnonzero(lp.A[:, j]):
            entries.append((rows[i], lp.A[i, j]))
        for rname, v in entries:
            out.append(f"    {cname:<8}  {rname:<8}  {_fmt_num(v):>12}")
    out.append("RHS")
    for i, rname in enumerate(rows):
        if lp.rhs[i] != 0:
            out.append(f"    {'RHS':<8}  {rname:<8}  {_fmt_num(lp.rhs[i]):>12}")
    out.append("BOUNDS")
    for j, cname in enumerate(cols):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == -np.inf and hi == np.inf:
            out.append(f" FR {'BND':<8}  {cname:<8}")
            continue
        if lo == hi:
            out.append(f" FX {'BND':<8}  {cname:<8}  {_fmt_num(lo):>12}")
            continue
        if lo == -np.inf:
            out.append(f" MI {'BND':<8}  {cname:<8}")
        elif lo != 0:
            out.append(f" LO {'BND':<8}  {cname:<8}  {_fmt_num(lo):>12}")
        if hi != np.inf:
            out.append(f" UP {'BND':<8}  {cname:<8}  {_fmt_num(hi):>12}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"
