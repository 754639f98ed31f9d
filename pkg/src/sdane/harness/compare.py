"""Rounds-to-eps / oracle-calls-to-eps tables and ordering checks across traces."""

from __future__ import annotations

import csv
import operator
from dataclasses import asdict, dataclass, field

OPS = {"<": operator.lt, "<=": operator.le, "==": operator.eq}

# (left label, quantity, op, right label); checked only when both labels are present
DEFAULT_ORDERINGS = (
    ("acc_sdane", "rounds", "<=", "sdane"),
    ("sdane", "rounds", "<=", "dane"),
    ("sdane", "oracle_total", "<", "dane"),
)


@dataclass
class AlgorithmSummary:
    label: str
    reached: bool
    rounds: int | None = None
    oracle_total: int | None = None
    oracle_parallel: int | None = None
    vectors: int | None = None


@dataclass
class OrderCheck:
    left: str
    quantity: str
    op: str
    right: str
    holds: bool | None  # None when either side never reached eps
    left_value: int | None = None
    right_value: int | None = None


@dataclass
class ComparisonReport:
    target_eps: float
    metric: str
    summaries: list[AlgorithmSummary] = field(default_factory=list)
    orderings: list[OrderCheck] = field(default_factory=list)

    def summary(self, label: str) -> AlgorithmSummary:
        for s in self.summaries:
            if s.label == label:
                return s
        raise KeyError(label)

    @property
    def all_tied(self) -> bool:
        reached = [s for s in self.summaries if s.reached]
        keys = {(s.rounds, s.oracle_total, s.oracle_parallel) for s in reached}
        return len(reached) == len(self.summaries) and len(keys) <= 1

    def to_dict(self) -> dict:
        return {
            "target_eps": self.target_eps,
            "metric": self.metric,
            "all_tied": self.all_tied,
            "summaries": [asdict(s) for s in self.summaries],
            "orderings": [asdict(o) for o in self.orderings],
        }


def first_reaching(trace, eps: float, metric: str = "f_gap_last"):
    for rec in trace:
        if getattr(rec, metric) <= eps:
            return rec
    return None


def compare(traces, target_eps: float, metric: str = "f_gap_last", orderings=DEFAULT_ORDERINGS) -> ComparisonReport:
    """Summarize labelled traces (a dict or (label, trace) pairs) at ``target_eps``."""
    items = list(traces.items()) if isinstance(traces, dict) else list(traces)
    if len(items) < 2:
        raise ValueError("compare needs at least two traces")
    report = ComparisonReport(target_eps, metric)
    for label, trace in items:
        rec = first_reaching(trace, target_eps, metric)
        if rec is None:
            report.summaries.append(AlgorithmSummary(label, False))
        else:
            report.summaries.append(AlgorithmSummary(label, True, rec.round, rec.cum_oracle_total,
                                                     rec.cum_oracle_parallel, rec.cum_vectors))
    labels = {s.label for s in report.summaries}
    for left, qty, op, right in orderings:
        if left not in labels or right not in labels:
            continue
        a, b = report.summary(left), report.summary(right)
        if not (a.reached and b.reached):
            report.orderings.append(OrderCheck(left, qty, op, right, None))
            continue
        va, vb = getattr(a, qty), getattr(b, qty)
        report.orderings.append(OrderCheck(left, qty, op, right, bool(OPS[op](va, vb)), va, vb))
    return report


PLOT_COLUMNS = ("label", "round", "cum_oracle_parallel", "cum_oracle_total", "f_gap_last", "f_gap_avg")


def write_plot_csv(traces, path) -> None:
    """Long-format plot data: one row per (label, round)."""
    items = list(traces.items()) if isinstance(traces, dict) else list(traces)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for label, trace in items:
            for rec in trace:
                w.writerow([label, rec.round, rec.cum_oracle_parallel, rec.cum_oracle_total,
                            format(rec.f_gap_last, ".17g"), format(rec.f_gap_avg, ".17g")])
