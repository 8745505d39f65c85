"""Closed-loop simulation of a controller against a benchmark plant."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

COMPLETED = "completed"
DIVERGED = "diverged"
REACHED = "reached"


@dataclass
class StepRecord:
    t: float
    state: np.ndarray
    control: np.ndarray
    delta: np.ndarray
    log: dict
    env: dict
    planned: bool  # counted by the contact-phase statistics
    has_control: bool
    buffer_feas: int
    buffer_opt: int
    cost: float


@dataclass
class EpisodeTrace:
    seed: int
    experiment: str
    nx: int
    nu: int
    ndelta: int
    records: list = field(default_factory=list)
    status: str = COMPLETED
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        return [r.log[name] for r in self.records]

    def csv_header(self) -> list[str]:
        return (["t"] + [f"x{i}" for i in range(self.nx)] + [f"u{i}" for i in range(self.nu)]
                + [f"delta{i}" for i in range(self.ndelta)]
                + ["iters", "iters_to_first", "UB", "LB", "gap", "n_feas", "n_opt", "solve_ns", "status"])

    def csv_rows(self):
        for r in self.records:
            lg = r.log
            first = "" if lg["iters_to_first_control"] is None else lg["iters_to_first_control"]
            yield ([_fmt(r.t)] + [_fmt(v) for v in r.state] + [_fmt(v) for v in r.control]
                   + [str(int(v)) for v in r.delta]
                   + [lg["iters"], first, _fmt(lg["UB"]), _fmt(lg["LB"]), _fmt(lg["gap"]),
                      r.buffer_feas, r.buffer_opt, lg["solve_time_ns"], lg["status"]])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header())
            for row in self.csv_rows():
                w.writerow(row)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "experiment": self.experiment, "status": self.status, "meta": self.meta,
            "nx": self.nx, "nu": self.nu, "ndelta": self.ndelta,
            "records": [{
                "t": r.t, "state": [float(v) for v in r.state], "control": [float(v) for v in r.control],
                "delta": [int(v) for v in r.delta], "log": r.log, "env": r.env, "planned": r.planned,
                "has_control": r.has_control, "buffer_feas": r.buffer_feas, "buffer_opt": r.buffer_opt,
                "cost": _json_num(r.cost), "seed": self.seed,
            } for r in self.records],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def _json_num(x: float):
    return x if math.isfinite(x) else str(x)


def plant_rng(seed: int) -> np.random.Generator:
    """Disturbance stream for an episode; layouts that need randomness use [seed, 0]."""
    return np.random.default_rng([seed, 1])


def simulate_episode(env, controller, steps: int, seed: int, experiment: str = "") -> EpisodeTrace:
    """Run ``steps`` control steps, truncating on divergence and stopping early once ``env.finished``.

    ``controller(theta)`` returns ``(u, GbdResult)``; it may expose a ``buffer``
    whose sizes are recorded after every step.
    """
    rng = plant_rng(seed)
    env.reset(rng)
    trace = EpisodeTrace(seed, experiment or type(env).__name__, env.nx, env.nu, env.ndelta)
    trace.meta["env"] = env.env_params()
    trace.meta["violations"] = 0
    if hasattr(env, "layout"):
        trace.meta["layout"] = env.layout()
    buffer = getattr(controller, "buffer", None)
    warm = getattr(controller, "warm", True)
    for _ in range(steps):
        state = env.state.copy()
        t = float(env.t)
        env_now = env.env_params()
        u, res = controller(env.theta())
        delta0 = (res.delta_star[0].astype(int) if res.delta_star is not None
                  else np.zeros(env.ndelta, dtype=int))
        bf = len(buffer.farkas) if (buffer is not None and warm) else 0
        bo = len(buffer.optimal) if (buffer is not None and warm) else 0
        trace.records.append(StepRecord(
            t=t, state=state, control=np.asarray(u, float).copy(), delta=delta0,
            log=res.log_record(t), env=env_now, planned=env.contact_planned(res.delta_star),
            has_control=res.u_star is not None, buffer_feas=bf, buffer_opt=bo, cost=float(res.UB),
        ))
        env.step(u, rng)
        if env.violates(env.state):
            trace.meta["violations"] = trace.meta.get("violations", 0) + 1
        if env.diverged(env.state):
            trace.status = DIVERGED
            break
        if env.finished(env.state):
            trace.status = REACHED
            break
    trace.meta["final_state"] = [float(v) for v in env.state]
    return trace
