"""Build environments and controllers from a RunConfig and run them."""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .benchmarks.cartpole import CartPoleEnv, WallMotion
from .benchmarks.freeflyer import FreeFlyerEnv
from .benchmarks.metrics import json_safe, aggregate
from .benchmarks.random_miqp import RandomMiqpSpec, oracle_suite
from .benchmarks.sim import EpisodeTrace, simulate_episode
from .config import ConfigError, RunConfig, dumps
from .gbd import OPTIMAL, GbdResult, GbdSettings, MpcController, brute_force_miqp
from .mld import as_delta, stack, theta_vector
from .qp import FarkasCertificate, kkt_report, solve_qp

ENUM_LIMIT = 20_000  # largest mode grid the enum-miqp controller will brute force


def make_env(cfg: RunConfig, seed: int):
    if cfg.experiment == "cartpole":
        w = cfg.walls
        walls = WallMotion(w.d0, w.amplitude, w.frequency, w.brownian_std, w.d_min, w.d_max)
        return CartPoleEnv(cfg.cartpole, cfg.N, walls)
    if cfg.experiment == "freeflyer":
        return FreeFlyerEnv(cfg.freeflyer, cfg.M_o, cfg.N, seed=seed)
    raise ConfigError(f"{cfg.experiment} has no closed-loop environment")


def gbd_settings(cfg: RunConfig, env) -> GbdSettings:
    return GbdSettings(G_a=cfg.G_a, I_max=cfg.I_max, master=cfg.master, lookahead=cfg.lookahead,
                       modes=env.modes, greedy_starts=cfg.greedy_starts, sticky_ties=cfg.sticky_ties)


class EnumController:
    """Reference controller: brute-force MIQP over the mode grid at every step."""

    warm = False

    def __init__(self, problem, modes):
        if len(modes) ** problem.N > ENUM_LIMIT:
            raise ConfigError(f"enum-miqp needs {len(modes)}^{problem.N} subproblems per step; "
                              f"limit is {ENUM_LIMIT}, use a gbd mode")
        self.problem = problem
        self.modes = modes

    def __call__(self, theta):
        t0 = time.perf_counter_ns()
        v, delta = brute_force_miqp(self.problem, theta, self.modes)
        n = len(self.modes) ** self.problem.N
        if delta is None:
            u = None
            status = "MasterInfeasible"
            z = ut = None
        else:
            sol = solve_qp(stack(self.problem, theta_vector(self.problem, theta), as_delta(self.problem, delta)))
            z = sol.z_star
            _, ut = self.problem.split(z)
            u = ut[0].copy()
            status = OPTIMAL
        res = GbdResult(u, ut, z, delta, v, v, n, n if delta is not None else None, [], [], [], [],
                        status, True, 0, 0, time.perf_counter_ns() - t0)
        return (u if u is not None else np.zeros(self.problem.nu)), res


class DiagnosedController:
    """Wraps a controller and re-checks KKT conditions of each returned subproblem solution."""

    def __init__(self, inner):
        self.inner = inner
        self.buffer = getattr(inner, "buffer", None)
        self.warm = getattr(inner, "warm", True)
        self.kkt_checked = 0
        self.kkt_failed = 0
        self.rejected_duals = 0

    def __call__(self, theta):
        u, res = self.inner(theta)
        self.rejected_duals += getattr(res, "rejected_duals", 0)
        if res.delta_star is not None:
            p = self.inner.problem
            qp = stack(p, theta_vector(p, theta), as_delta(p, res.delta_star))
            sol = solve_qp(qp)
            if not isinstance(sol, FarkasCertificate):
                self.kkt_checked += 1
                self.kkt_failed += not kkt_report(sol, qp).ok
        return u, res

    def report(self) -> dict:
        return {"kkt_checked": self.kkt_checked, "kkt_failed": self.kkt_failed,
                "rejected_duals": self.rejected_duals}


def make_controller(cfg: RunConfig, env):
    if cfg.mode == "enum-miqp":
        ctl = EnumController(env.problem, env.modes)
    else:
        ctl = MpcController(env.problem, gbd_settings(cfg, env), K_feas=cfg.K_feas, K_opt=cfg.K_opt,
                            epsilon=cfg.epsilon, alpha=cfg.alpha, warm=cfg.mode == "gbd-warm")
    return DiagnosedController(ctl) if cfg.diagnostics else ctl


def run_episodes(cfg: RunConfig) -> tuple[list[EpisodeTrace], list[dict]]:
    cfg = cfg.resolved()
    traces, diag = [], []
    for seed in cfg.seeds():
        env = make_env(cfg, seed)
        ctl = make_controller(cfg, env)
        steps = cfg.steps(env.params.dt)
        tr = simulate_episode(env, ctl, steps, seed, cfg.experiment)
        if cfg.experiment == "freeflyer":
            tr.meta["final_distance"] = env.distance_to_target(env.state)
        traces.append(tr)
        diag.append(ctl.report() if isinstance(ctl, DiagnosedController) else {})
    return traces, diag


def episode_summary(cfg: RunConfig, traces, diag) -> dict:
    rep = aggregate(traces)
    out = {"experiment": cfg.experiment, "N": cfg.N, "mode": cfg.mode, "master": cfg.master,
           "seeds": [t.seed for t in traces]}
    out.update(rep.to_dict())
    for k in ("feas_cut_series", "opt_cut_series", "cost_series"):
        out.pop(k)
    out["episodes"] = [{"seed": t.seed, "status": t.status, "steps": len(t),
                        "violations": t.meta.get("violations", 0),
                        "final_distance": t.meta.get("final_distance"),
                        "max_feas_cuts": max((r.buffer_feas for r in t.records), default=0)}
                       for t in traces]
    if cfg.diagnostics:
        out["diagnostics"] = diag
    return json_safe(out)


def random_miqp_summary(cfg: RunConfig) -> dict:
    rows, elapsed, _ = oracle_suite(cfg.count, cfg.seed, G_a=cfg.G_a, I_max=cfg.I_max,
                                    spec=RandomMiqpSpec())
    devs = [r.rel_dev for r in rows]
    out = {"experiment": "random-miqp", "count": cfg.count, "seed": cfg.seed, "elapsed_s": elapsed,
           "statuses": {s: sum(r.status == s for r in rows) for s in sorted({r.status for r in rows})},
           "median_iters": float(np.median([r.iters for r in rows]))}
    if cfg.check_oracle:
        out["max_rel_dev"] = max(devs)
        out["oracle_ok"] = bool(max(devs) <= 1e-5)
    return json_safe(out)


def run(cfg: RunConfig, write: bool = True) -> tuple[dict, list[EpisodeTrace]]:
    """Execute the experiment; writes config, per-episode CSV/JSON and summary JSON under cfg.out."""
    cfg = cfg.resolved()
    if cfg.experiment == "random-miqp":
        summary, traces = random_miqp_summary(cfg), []
    else:
        traces, diag = run_episodes(cfg)
        summary = episode_summary(cfg, traces, diag)
    if write:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg.experiment}_N{cfg.N}_{cfg.mode}_s{cfg.seed}"
        (out / f"{stem}_config.json").write_text(dumps(cfg))
        for tr in traces:
            tr.write_csv(out / f"{stem}_ep{tr.seed}.csv")
            tr.write_json(out / f"{stem}_ep{tr.seed}.json")
        (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        summary["_files"] = str(out / f"{stem}_summary.json")
    return summary, traces
