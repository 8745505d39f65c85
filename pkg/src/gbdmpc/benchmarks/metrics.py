"""Iteration and timing statistics over simulated episodes."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    n_solves: int
    n_counted: int
    histogram: dict  # iterations-to-first-control -> count, over counted solves
    fraction_1iter: float
    fraction_le5iter: float
    # stricter variants that also require the gap test to have closed
    fraction_1iter_optimal: float
    fraction_le5iter_optimal: float
    median_iters: float
    status_counts: dict
    uncounted_status_counts: dict
    median_solve_ns: float
    p90_solve_ns: float
    feas_cut_series: list = field(default_factory=list)
    opt_cut_series: list = field(default_factory=list)
    cost_series: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["histogram"] = {str(k): v for k, v in sorted(self.histogram.items())}
        return json_safe(d)


def json_safe(x):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(x, dict):
        return {k: json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _frac(num: int, den: int) -> float:
    return num / den if den else float("nan")


def counted_records(trace, t_min: float = 0.0):
    """Solves that produced a control and planned at least one contact (every control for free-flyer)."""
    return [r for r in trace.records if r.planned and r.has_control and r.t >= t_min - 1e-12]


def aggregate(traces, t_min: float = 0.0) -> MetricsReport:
    """Pool per-solve records of several episodes.

    Iterations are counted up to the iteration that first produced the
    returned control.  Solves without a control, or whose plan has no contact,
    enter only ``uncounted_status_counts``.
    """
    traces = list(traces)
    if not traces:
        raise MetricsError("aggregate needs at least one trace")
    counted, alls = [], []
    for tr in traces:
        alls += [r for r in tr.records if r.t >= t_min - 1e-12]
        counted += counted_records(tr, t_min)
    ids = {id(r) for r in counted}
    firsts = [r.log["iters_to_first_control"] for r in counted]
    hist = Counter(firsts)
    n = len(counted)
    opt = [r.log["status"] == "Optimal" for r in counted]
    iters = [r.log["iters"] for r in counted]
    times = np.array([r.log["solve_time_ns"] for r in alls], dtype=float)
    return MetricsReport(
        n_solves=len(alls),
        n_counted=n,
        histogram=dict(hist),
        fraction_1iter=_frac(sum(f == 1 for f in firsts), n),
        fraction_le5iter=_frac(sum(f <= 5 for f in firsts), n),
        fraction_1iter_optimal=_frac(sum(o and i == 1 for o, i in zip(opt, iters)), n),
        fraction_le5iter_optimal=_frac(sum(o and i <= 5 for o, i in zip(opt, iters)), n),
        median_iters=float(np.median(firsts)) if n else float("nan"),
        status_counts=dict(Counter(r.log["status"] for r in alls)),
        uncounted_status_counts=dict(Counter(r.log["status"] for r in alls if id(r) not in ids)),
        median_solve_ns=float(np.median(times)) if times.size else float("nan"),
        p90_solve_ns=float(np.percentile(times, 90)) if times.size else float("nan"),
        feas_cut_series=[[r.buffer_feas for r in tr.records] for tr in traces],
        opt_cut_series=[[r.buffer_opt for r in tr.records] for tr in traces],
        cost_series=[[r.cost for r in tr.records] for tr in traces],
    )


def median_iters_to_first(traces, t_min: float = 0.0) -> float:
    firsts = [r.log["iters_to_first_control"] for tr in traces for r in counted_records(tr, t_min)]
    return float(np.median(firsts)) if firsts else float("nan")
