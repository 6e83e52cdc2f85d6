"""Malmquist productivity index on network-DEA scores and the FSI panel."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from . import lp as lpmod
from .exceptions import MalmquistDomainError
from .netdea import DeaOptions, NetworkSpec, evaluate_period
from .panel import Panel, shift_normalize

log = logging.getLogger(__name__)

SAME_PERIOD_TOL = 1e-8
STAGE_LABELS_3 = ("MI_d", "MI_l", "MI_p")


@dataclass(frozen=True)
class ScoreQuadruple:
    """Scores of one DMU across a year pair.

    ``t_t`` is the period-t data scored on the period-t frontier,
    ``t_t1`` the period-(t+1) data on the period-t frontier, ``t1_t`` the
    period-t data on the period-(t+1) frontier and ``t1_t1`` the
    period-(t+1) data on its own frontier.
    """

    t_t: float
    t_t1: float
    t1_t: float
    t1_t1: float

    def check(self) -> "ScoreQuadruple":
        vals = (self.t_t, self.t_t1, self.t1_t, self.t1_t1)
        for v in vals:
            if not (math.isfinite(v) and v > 0):
                raise MalmquistDomainError(f"Malmquist scores must be finite and positive, got {v!r}")
        for v in (self.t_t, self.t1_t1):
            if v > 1 + SAME_PERIOD_TOL:
                raise MalmquistDomainError(f"same-period score {v!r} exceeds 1")
        return self

    def reversed(self) -> "ScoreQuadruple":
        """The same pair seen with the two periods swapped."""
        return ScoreQuadruple(self.t1_t1, self.t1_t, self.t_t1, self.t_t)


def malmquist(q: ScoreQuadruple) -> float:
    """Geometric-mean (Fisher-type) Malmquist index; > 1 means improvement."""
    q.check()
    return math.sqrt((q.t_t1 / q.t_t) * (q.t1_t1 / q.t1_t))


def decompose(q: ScoreQuadruple) -> tuple:
    """``(EC, TC)`` with ``EC * TC == malmquist(q)``."""
    q.check()
    ec = q.t1_t1 / q.t_t
    tc = math.sqrt((q.t_t1 / q.t1_t1) * (q.t_t / q.t1_t))
    return ec, tc


def stage_malmquist(quadruples) -> tuple:
    """Per-stage indices from per-stage quadruples."""
    return tuple(malmquist(q) for q in quadruples)


@dataclass
class MalmquistRecord:
    unit: str
    period_from: int
    period_to: int
    mi: float = float("nan")
    ec: float = float("nan")
    tc: float = float("nan")
    stage_mi: tuple = ()
    status: str = "ok"

    def as_row(self, stage_labels) -> dict:
        row = {"unit": self.unit, "period": self.period_to, "FSI": self.mi, "EC": self.ec, "TC": self.tc}
        for k, label in enumerate(stage_labels):
            row[label] = self.stage_mi[k] if k < len(self.stage_mi) else float("nan")
        row["status"] = self.status
        return row


@dataclass
class FsiOptions:
    dea: DeaOptions = field(default_factory=DeaOptions)
    shift_columns: tuple = ()
    shift_floor: float = 0.1
    stage_labels: tuple | None = None


@dataclass
class FsiResult:
    panel: Panel
    records: list
    efficiency: list
    stage_labels: tuple
    skipped: list = field(default_factory=list)

    def status_counts(self) -> dict:
        out: dict = {}
        for r in self.efficiency:
            out[r.status] = out.get(r.status, 0) + 1
        return dict(sorted(out.items()))

    def failure_share(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.status != "ok" for r in self.records) / len(self.records)

    def table(self) -> pd.DataFrame:
        cols = ["unit", "period", "FSI", "EC", "TC", *self.stage_labels, "status"]
        rows = [r.as_row(self.stage_labels) for r in self.records]
        return pd.DataFrame(rows, columns=cols)


def _stage_labels(spec: NetworkSpec, options: FsiOptions) -> tuple:
    if options.stage_labels is not None:
        if len(options.stage_labels) != spec.n_stages:
            raise ValueError("one stage label per stage is required")
        return tuple(options.stage_labels)
    if spec.n_stages == 3:
        return STAGE_LABELS_3
    return tuple(f"MI_{p + 1}" for p in range(spec.n_stages))


def _pair_record(unit, t, t1, r_tt, r_tt1, r_t1t, r_t1t1, n_stages) -> MalmquistRecord:
    rec = MalmquistRecord(unit, t, t1, stage_mi=(float("nan"),) * n_stages)
    bad = [r for r in (r_tt, r_tt1, r_t1t, r_t1t1) if r.status != lpmod.OPTIMAL]
    if bad:
        rec.status = bad[0].status
        return rec
    q = ScoreQuadruple(r_tt.theta, r_tt1.theta, r_t1t.theta, r_t1t1.theta)
    try:
        rec.mi = malmquist(q)
        rec.ec, rec.tc = decompose(q)
    except MalmquistDomainError:
        rec.status = "domain"
        return rec
    stage = []
    for p in range(n_stages):
        sq = ScoreQuadruple(r_tt.stage_scores[p], r_tt1.stage_scores[p],
                            r_t1t.stage_scores[p], r_t1t1.stage_scores[p])
        try:
            stage.append(malmquist(sq))
        except MalmquistDomainError:
            stage.append(float("nan"))
            rec.status = "stage-domain"
    rec.stage_mi = tuple(stage)
    return rec


def compute_fsi(panel: Panel, spec: NetworkSpec, options: FsiOptions | None = None) -> FsiResult:
    """Run the four frontier/data combinations for every consecutive year pair.

    Index values of the pair (t, t+1) are written at period t+1, so a panel
    with T periods yields T-1 index years per unit.
    """
    options = options or FsiOptions()
    labels = _stage_labels(spec, options)
    periods = panel.periods
    records, effs, skipped = [], [], []
    cache: dict = {}
    for t, t1 in zip(periods[:-1], periods[1:]):
        sub = panel.select_periods([t, t1])
        if options.shift_columns:
            sub = shift_normalize(sub, options.shift_columns, options.shift_floor)
            cache = {}

        def run(data_p, frontier_p):
            key = (data_p, frontier_p)
            if key not in cache:
                recs = evaluate_period(spec, sub, data_p, frontier_p, options.dea)
                cache[key] = {r.dmu: r for r in recs}
                effs.extend(recs)
            return cache[key]

        r_tt, r_tt1 = run(t, t), run(t1, t)
        r_t1t, r_t1t1 = run(t, t1), run(t1, t1)
        units = set(r_tt) | set(r_t1t1)
        common = sorted(set(r_tt) & set(r_tt1) & set(r_t1t) & set(r_t1t1))
        for u in sorted(units - set(common)):
            skipped.append((u, t, t1))
            log.info("unit %s skipped for pair %s-%s: missing in one period", u, t, t1)
        for u in common:
            rec = _pair_record(u, t, t1, r_tt[u], r_tt1[u], r_t1t[u], r_t1t1[u], spec.n_stages)
            if rec.status != "ok":
                log.info("unit %s pair %s-%s flagged: %s", u, t, t1, rec.status)
            records.append(rec)
        if not options.shift_columns:
            cache = {k: v for k, v in cache.items() if k == (t1, t1)}
    records.sort(key=lambda r: (r.unit, r.period_to))

    idx = panel.frame().index
    cols = {name: pd.Series(np.nan, index=idx) for name in ("FSI", "EC", "TC", *labels)}
    for r in records:
        key = (r.unit, r.period_to)
        cols["FSI"][key], cols["EC"][key], cols["TC"][key] = r.mi, r.ec, r.tc
        for k, label in enumerate(labels):
            cols[label][key] = r.stage_mi[k]
    roles = {"FSI": "regression-dependent", "EC": "auxiliary", "TC": "auxiliary",
             **{label: "auxiliary" for label in labels}}
    out = panel.with_columns(cols, roles=roles, provenance={"fsi": {"stage_labels": list(labels)}})
    return FsiResult(out, records, effs, labels, skipped)


def fsi_panel(panel: Panel, spec: NetworkSpec, options: FsiOptions | None = None) -> Panel:
    """``panel`` augmented with FSI, EC, TC and one index column per stage."""
    return compute_fsi(panel, spec, options).panel


class MalmquistFSI(BaseEstimator, TransformerMixin):
    """Transformer adding the Malmquist-based FSI columns to a panel."""

    def __init__(self, spec=None, positivity_floor=1e-6, shift_columns=(), shift_floor=0.1, n_jobs=1):
        self.spec = spec
        self.positivity_floor = positivity_floor
        self.shift_columns = shift_columns
        self.shift_floor = shift_floor
        self.n_jobs = n_jobs

    def fit(self, X: Panel, y=None):
        self.spec.check_panel_roles(X.roles)
        self.periods_ = X.periods
        return self

    def transform(self, X: Panel) -> Panel:
        opts = FsiOptions(DeaOptions(positivity_floor=self.positivity_floor, n_jobs=self.n_jobs),
                          tuple(self.shift_columns), self.shift_floor)
        self.result_ = compute_fsi(X, self.spec, opts)
        return self.result_.panel
