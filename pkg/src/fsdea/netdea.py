"""Multi-stage network DEA under the additive efficiency decomposition.

A linear chain of stages is evaluated jointly by one multiplier LP. For the
target DMU ``o`` and frontier DMUs ``i`` the LP is::

    max  sum_p ( u_p . z1_p(o) + eta_p . z2_p(o) + eps_p )
    s.t. sum_p  In_p(o) = 1
         u_p . z1_p(i) + eta_p . z2_p(i) + eps_p <= In_p(i)     for all i, p
         u, eta, nu >= floor;  eps free

with ``In_1 = nu_0 . z0`` and ``In_p = eta_{p-1} . z2_{p-1} + nu_{p-1} . z3_p``
for ``p >= 2``. Stage weights are the virtual-input shares
``w_p = In_p(o) / sum_q In_q(o)`` so that ``theta = sum_p w_p theta_p``.

Weight names follow the usual network-DEA indexing: ``u[p,r]`` for final
outputs of stage p, ``eta[p,k]`` for intermediates leaving stage p,
``nu[0,j]`` for initial inputs and ``nu[p-1,j]`` for external inputs that
enter stage p.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from . import lp as lpmod
from .exceptions import ConsistencyError, EmptyResultError, PositivityError, SpecError

DEFAULT_FLOOR = 1e-6


@dataclass(frozen=True)
class StageSpec:
    """Columns attached to one stage.

    ``external_inputs`` are the inputs that enter *this* stage from outside
    the chain (so the first stage never has any; use ``initial_inputs``).
    """

    final_outputs: tuple = ()
    intermediate_outputs: tuple = ()
    initial_inputs: tuple = ()
    external_inputs: tuple = ()

    def __post_init__(self):
        for name in ("final_outputs", "intermediate_outputs", "initial_inputs", "external_inputs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


@dataclass(frozen=True)
class NetworkSpec:
    stages: tuple

    def __post_init__(self):
        stages = tuple(s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise SpecError("a network needs at least one stage")
        if not stages[0].initial_inputs:
            raise SpecError("stage 1 needs initial inputs")
        if stages[0].external_inputs:
            raise SpecError("stage 1 takes initial inputs, not external inputs")
        for p, st in enumerate(stages[1:], start=2):
            if st.initial_inputs:
                raise SpecError(f"stage {p}: initial inputs are allowed on stage 1 only")
        if stages[-1].intermediate_outputs:
            raise SpecError("the last stage cannot pass intermediates on; its outputs leave the process")
        for p, st in enumerate(stages, start=1):
            if not (st.final_outputs or st.intermediate_outputs):
                raise SpecError(f"stage {p} has no outputs")
        cols = self.columns()
        if len(cols) != len(set(cols)):
            dup = next(c for c in cols if cols.count(c) > 1)
            raise SpecError(f"column {dup!r} is used in more than one slot")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def columns(self) -> list:
        out = []
        for st in self.stages:
            out += list(st.initial_inputs) + list(st.external_inputs)
            out += list(st.intermediate_outputs) + list(st.final_outputs)
        return out

    def roles(self) -> dict:
        roles = {}
        for st in self.stages:
            roles.update({c: "initial-input" for c in st.initial_inputs})
            roles.update({c: "external-input" for c in st.external_inputs})
            roles.update({c: "intermediate-output" for c in st.intermediate_outputs})
            roles.update({c: "final-output" for c in st.final_outputs})
        return roles

    def output_columns(self) -> list:
        return [c for st in self.stages for c in st.final_outputs + st.intermediate_outputs]

    def check_panel_roles(self, panel_roles) -> None:
        for col, role in self.roles().items():
            got = panel_roles.get(col)
            if got is None:
                raise SpecError(f"column {col!r} is not in the panel")
            if got not in ("auxiliary", role):
                raise SpecError(f"column {col!r} has role {got!r}, network expects {role!r}")

    @classmethod
    def from_dict(cls, payload: dict) -> "NetworkSpec":
        return cls(tuple(StageSpec(**s) for s in payload["stages"]))

    @classmethod
    def from_json(cls, path) -> "NetworkSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        stages = []
        for st in self.stages:
            d = {k: list(v) for k, v in asdict(st).items() if v}
            stages.append(d)
        return {"stages": stages}

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def bank_network_spec(stage3_external_input: str, exiting_stage1_output: str = "roe") -> NetworkSpec:
    """Deposit -> loan -> profitability chain for commercial banks.

    The stage-3 external input is never named in the source study, so the
    caller must supply it. ``exiting_stage1_output`` picks which of the three
    deposit-stage outputs leaves the process; the remaining two of
    ``deposits``, ``operating_cash``, ``roe`` become intermediates.
    """
    stage1_outs = ["deposits", "operating_cash", "roe"]
    if exiting_stage1_output not in stage1_outs:
        raise SpecError(f"exiting stage-1 output must be one of {stage1_outs}")
    inter1 = tuple(c for c in stage1_outs if c != exiting_stage1_output)
    return NetworkSpec((
        StageSpec(final_outputs=(exiting_stage1_output,), intermediate_outputs=inter1,
                  initial_inputs=("salary_per_employee", "capex", "equity")),
        StageSpec(final_outputs=("roa",), intermediate_outputs=("net_loans", "net_interest_income"),
                  external_inputs=("total_assets",)),
        StageSpec(final_outputs=("revenue_per_employee", "total_revenue", "net_profit_margin"),
                  external_inputs=(stage3_external_input,)),
    ))


class _Layout:
    """Column positions of every weight symbol in the LP."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        names, data_cols = [], []
        self.u, self.eta, self.nu_init, self.nu_ext = [], [], [], []
        for p, st in enumerate(spec.stages, start=1):
            self.u.append([len(names) + r for r in range(len(st.final_outputs))])
            for r, c in enumerate(st.final_outputs, start=1):
                names.append(f"u[{p},{r}]"); data_cols.append(c)
            self.eta.append([len(names) + k for k in range(len(st.intermediate_outputs))])
            for k, c in enumerate(st.intermediate_outputs, start=1):
                names.append(f"eta[{p},{k}]"); data_cols.append(c)
        st1 = spec.stages[0]
        self.nu_init = [len(names) + j for j in range(len(st1.initial_inputs))]
        for j, c in enumerate(st1.initial_inputs, start=1):
            names.append(f"nu[0,{j}]"); data_cols.append(c)
        for p, st in enumerate(spec.stages, start=1):
            self.nu_ext.append([len(names) + j for j in range(len(st.external_inputs))])
            for j, c in enumerate(st.external_inputs, start=1):
                names.append(f"nu[{p - 1},{j}]"); data_cols.append(c)
        self.n_weights = len(names)
        self.eps = list(range(len(names), len(names) + spec.n_stages))
        names += [f"eps[{p}]" for p in range(1, spec.n_stages + 1)]
        self.names = tuple(names)
        self.data_cols = data_cols  # data column multiplying each weight

    def stage_out(self, p):
        """Weight indices in the output side of stage p (0-based)."""
        return self.u[p] + self.eta[p]

    def stage_in(self, p):
        if p == 0:
            return self.nu_init
        return self.eta[p - 1] + self.nu_ext[p]


_LAYOUTS: dict = {}


def _layout(spec: NetworkSpec) -> _Layout:
    lay = _LAYOUTS.get(spec)
    if lay is None:
        lay = _LAYOUTS[spec] = _Layout(spec)
    return lay


def _observation_matrix(obs: pd.DataFrame | pd.Series, cols, what: str) -> np.ndarray:
    if isinstance(obs, pd.Series):
        obs = obs.to_frame().T
    missing = [c for c in cols if c not in obs.columns]
    if missing:
        raise SpecError(f"{what} lacks column {missing[0]!r}")
    arr = obs[list(cols)].to_numpy(dtype=float)
    bad = ~(arr > 0) | ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise PositivityError(f"{what}: value {arr[r, c]!r} in column {cols[c]!r} "
                              f"(dmu {obs.index[r]!r}) must be strictly positive")
    return arr


def assemble_lp(spec: NetworkSpec, frontier: pd.DataFrame, target: pd.Series,
                positivity_floor: float = DEFAULT_FLOOR, name: str = "netdea") -> lpmod.LinearProgram:
    """Multiplier LP for ``target`` against the rows of ``frontier``.

    ``frontier`` is indexed by DMU with one column per network variable;
    whether the target is part of the frontier is the caller's choice.
    """
    if len(frontier) == 0:
        raise EmptyResultError("frontier is empty")
    lay = _layout(spec)
    cols = lay.data_cols
    Zf = _observation_matrix(frontier, cols, "frontier")
    zo = _observation_matrix(target, cols, "target")[0]
    n_dmu = Zf.shape[0]
    n_var = len(lay.names)
    P = spec.n_stages

    c = np.zeros(n_var)
    for p in range(P):
        idx = lay.stage_out(p)
        c[idx] = zo[idx]
        c[lay.eps[p]] = 1.0

    A = np.zeros((1 + P * n_dmu, n_var))
    for p in range(P):
        A[0, lay.stage_in(p)] = zo[lay.stage_in(p)]
    for p in range(P):
        rows = slice(1 + p * n_dmu, 1 + (p + 1) * n_dmu)
        out_idx, in_idx = lay.stage_out(p), lay.stage_in(p)
        A[rows, out_idx] = Zf[:, out_idx]
        A[rows, in_idx] -= Zf[:, in_idx]
        A[rows, lay.eps[p]] = 1.0
    rhs = np.zeros(A.shape[0])
    rhs[0] = 1.0
    relations = ("=",) + ("<=",) * (P * n_dmu)
    dmus = [str(d) for d in frontier.index]
    cnames = ("norm",) + tuple(f"s{p + 1}_{d}" for p in range(P) for d in dmus)
    lower = np.full(n_var, float(positivity_floor))
    upper = np.full(n_var, np.inf)
    lower[lay.eps] = -np.inf
    return lpmod.LinearProgram(lay.names, lower, upper, c, A, relations, rhs, cnames, name)


@dataclass
class DeaOptions:
    positivity_floor: float = DEFAULT_FLOOR
    rescale: bool = True
    feasibility_tol: float = lpmod.FEASIBILITY_TOL
    optimality_tol: float = lpmod.OPTIMALITY_TOL
    iteration_limit: int = lpmod.ITERATION_LIMIT
    n_jobs: int = 1


@dataclass
class EfficiencyRecord:
    dmu: str
    data_period: int | None
    frontier_period: int | None
    stage_scores: tuple
    stage_weights: tuple
    theta: float
    multipliers: dict = field(default_factory=dict)
    status: str = lpmod.OPTIMAL
    iterations: int = 0
    scales: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == lpmod.OPTIMAL

    def as_row(self, n_stages: int = 3) -> dict:
        row = {"unit": self.dmu, "data_period": self.data_period, "frontier_period": self.frontier_period}
        for p in range(n_stages):
            row[f"theta{p + 1}"] = self.stage_scores[p] if p < len(self.stage_scores) else np.nan
        for p in range(n_stages):
            row[f"w{p + 1}"] = self.stage_weights[p] if p < len(self.stage_weights) else np.nan
        row["theta"] = self.theta
        row["status"] = self.status
        return row


def _column_scales(target: pd.Series, cols) -> np.ndarray:
    return target[list(cols)].to_numpy(dtype=float)


def evaluate(spec: NetworkSpec, frontier: pd.DataFrame, target: pd.Series,
             options: DeaOptions | None = None, *, dmu=None, data_period=None,
             frontier_period=None) -> EfficiencyRecord:
    """Solve the network LP for one target and decompose the optimum.

    With ``options.rescale`` every data column is divided by the target's
    own value before assembly, so the positivity floor acts on weights of
    unit-free data and scores do not depend on the units of any column or
    on which other DMUs share the frontier scale. Reported multipliers refer
    to the rescaled data (the divisors are returned in ``record.scales``).
    """
    options = options or DeaOptions()
    lay = _layout(spec)
    cols = list(dict.fromkeys(lay.data_cols))
    if options.rescale:
        _observation_matrix(frontier, cols, "frontier")
        _observation_matrix(target, cols, "target")
        sc = _column_scales(target, cols)
        scales = dict(zip(cols, sc.tolist()))
        frontier = frontier[cols] / sc
        target = target[cols] / sc
    else:
        scales = {}
    lp = assemble_lp(spec, frontier, target, options.positivity_floor)
    sol = lpmod.solve(lp, options.feasibility_tol, options.optimality_tol, options.iteration_limit)
    dmu = dmu if dmu is not None else (target.name if isinstance(target, pd.Series) else None)
    P = spec.n_stages
    if not sol.optimal:
        theta = np.inf if sol.status == lpmod.UNBOUNDED else np.nan
        return EfficiencyRecord(str(dmu), data_period, frontier_period, (np.nan,) * P, (np.nan,) * P,
                                theta, {}, sol.status, sol.iterations, scales)
    x = sol.x
    zo = target[lay.data_cols].to_numpy(dtype=float) if isinstance(target, pd.Series) else \
        np.asarray(target, dtype=float)
    virt_in = np.array([x[lay.stage_in(p)] @ zo[lay.stage_in(p)] for p in range(P)])
    virt_out = np.array([x[lay.stage_out(p)] @ zo[lay.stage_out(p)] + x[lay.eps[p]] for p in range(P)])
    total = virt_in.sum()
    weights = virt_in / total
    scores = virt_out / virt_in
    theta = sol.objective
    gap = abs(theta - float(weights @ scores))
    if gap > 1e-6:
        raise ConsistencyError(f"theta {theta!r} != sum w_p theta_p (gap {gap:.3g}) for dmu {dmu!r}")
    return EfficiencyRecord(str(dmu), data_period, frontier_period, tuple(scores.tolist()),
                            tuple(weights.tolist()), float(theta), dict(sol.values), sol.status,
                            sol.iterations, scales)


def _complete_rows(panel, period, cols) -> pd.DataFrame:
    df = panel.cross_section(period, cols)
    return df[df.notna().all(axis=1)]


def _evaluate_chunk(args):
    spec, frontier, targets, options, data_period, frontier_period = args
    return [evaluate(spec, frontier, targets.loc[u], options, dmu=u,
                     data_period=data_period, frontier_period=frontier_period)
            for u in targets.index]


def evaluate_period(spec: NetworkSpec, panel, data_period: int, frontier_period: int,
                    options: DeaOptions | None = None) -> list:
    """Score every DMU observed in both periods against one period's frontier.

    The frontier is every DMU of ``frontier_period`` with complete data; the
    target observation comes from ``data_period``. Records are ordered by DMU.
    """
    options = options or DeaOptions()
    for p in (data_period, frontier_period):
        if p not in panel.periods:
            raise KeyError(f"period {p} not in panel")
    cols = list(dict.fromkeys(_layout(spec).data_cols))
    frontier = _complete_rows(panel, frontier_period, cols)
    targets = _complete_rows(panel, data_period, cols)
    common = sorted(set(frontier.index) & set(targets.index))
    if not common:
        raise EmptyResultError(f"no DMU has complete data in both {data_period} and {frontier_period}")
    targets = targets.loc[common]
    if options.n_jobs > 1 and len(common) > 1:
        chunks = np.array_split(np.arange(len(common)), options.n_jobs)
        jobs = [(spec, frontier, targets.iloc[ch], options, data_period, frontier_period)
                for ch in chunks if len(ch)]
        with ProcessPoolExecutor(max_workers=options.n_jobs) as pool:
            parts = list(pool.map(_evaluate_chunk, jobs))
        records = [r for part in parts for r in part]
    else:
        records = _evaluate_chunk((spec, frontier, targets, options, data_period, frontier_period))
    return sorted(records, key=lambda r: r.dmu)


def records_frame(records: Sequence[EfficiencyRecord], n_stages: int = 3) -> pd.DataFrame:
    """Batch output table: unit, data_period, frontier_period, theta1..,
    w1.., theta, status."""
    return pd.DataFrame([r.as_row(n_stages) for r in records])


class NetworkDEA(BaseEstimator):
    """Estimator wrapper: ``fit`` stores a frontier, ``transform`` scores targets.

    Parameters
    ----------
    spec : NetworkSpec
        Stage/column layout.
    positivity_floor : float
        Lower bound of every output/intermediate/input weight.
    rescale : bool
        Divide each column by the target's own value before solving.
    include_self : bool
        Append each target to the frontier before solving (same-period use).
    """

    def __init__(self, spec=None, positivity_floor=DEFAULT_FLOOR, rescale=True, include_self=True,
                 feasibility_tol=lpmod.FEASIBILITY_TOL, optimality_tol=lpmod.OPTIMALITY_TOL,
                 iteration_limit=lpmod.ITERATION_LIMIT):
        self.spec = spec
        self.positivity_floor = positivity_floor
        self.rescale = rescale
        self.include_self = include_self
        self.feasibility_tol = feasibility_tol
        self.optimality_tol = optimality_tol
        self.iteration_limit = iteration_limit

    def _options(self):
        return DeaOptions(self.positivity_floor, self.rescale, self.feasibility_tol,
                          self.optimality_tol, self.iteration_limit)

    def fit(self, X: pd.DataFrame, y=None):
        if self.spec is None:
            raise SpecError("NetworkDEA needs a spec")
        cols = list(dict.fromkeys(_layout(self.spec).data_cols))
        _observation_matrix(X, cols, "frontier")
        self.frontier_ = X[cols].copy()
        self.n_features_in_ = len(cols)
        return self

    def evaluate(self, X: pd.DataFrame) -> list:
        if not hasattr(self, "frontier_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit before scoring")
        opts = self._options()
        out = []
        for dmu, row in X.iterrows():
            frontier = self.frontier_
            if self.include_self and dmu not in frontier.index:
                frontier = pd.concat([frontier, row[frontier.columns].to_frame().T])
            out.append(evaluate(self.spec, frontier, row, opts, dmu=dmu))
        return out

    def transform(self, X: pd.DataFrame) -> np.ndarray:
        """Overall theta for each row of ``X``."""
        return np.array([r.theta for r in self.evaluate(X)])

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
