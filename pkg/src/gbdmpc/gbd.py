"""Benders iterations for one parameter vector and the receding-horizon loop around them."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cuts import (CutBuffer, CutError, InstantiatedCuts, earliest_certificate, farkas_record, instantiate,
                   optimal_record)
from .master import BacktrackBudgetExceeded, StepModeList, solve_enumeration, solve_greedy
from .mld import MldProblem, as_delta, stack, theta_vector
from .qp import FarkasCertificate, solve_qp

OPTIMAL = "Optimal"
GAP_NOT_CLOSED = "GapNotClosed"
NO_CONTROL = "NoControl"
MASTER_INFEASIBLE = "MasterInfeasible"


def gap(z_p: float, z_d: float) -> float:
    """Relative optimality gap |z_p - z_d| / |z_p|."""
    if math.isinf(z_p) or math.isinf(z_d) or math.isnan(z_p) or math.isnan(z_d):
        return math.inf
    if z_p == 0.0:
        return 0.0 if z_d == 0.0 else math.inf
    return abs(z_p - z_d) / abs(z_p)


@dataclass
class GbdSettings:
    G_a: float = 0.1
    I_max: int = 5
    master: str = "greedy"  # "greedy" or "enum"
    lookahead: bool = False
    backtrack_budget: int | None = None
    enum_cap: int = 2 ** 20
    modes: StepModeList | None = None
    use_qp_hint: bool = True
    earliest_certificates: bool = True
    greedy_starts: int = 1  # step-0 candidates the greedy master completes before choosing
    sticky_ties: bool = False  # greedy ties keep the previous step's mode
    store_inclusive: bool = False  # also store the duals of the first-control iteration itself


@dataclass
class IterationRecord:
    delta: np.ndarray
    master_value: float
    feasible: bool
    v: float = math.inf
    LB: float = -math.inf
    UB: float = math.inf


@dataclass
class GbdResult:
    u_star: np.ndarray | None
    u_traj: np.ndarray | None
    z_star: np.ndarray | None
    delta_star: np.ndarray | None
    UB: float
    LB: float
    iters: int
    iters_to_first_control: int | None
    new_farkas: list
    new_optimal: list
    stored_farkas: list
    stored_optimal: list
    status: str
    lb_certified: bool
    n_feas_cuts: int
    n_opt_cuts: int
    solve_time_ns: int
    master_backtracks: int = 0
    rejected_duals: int = 0
    history: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return gap(self.UB, self.LB)

    def log_record(self, t: float) -> dict:
        return {
            "t": float(t),
            "iters": int(self.iters),
            "iters_to_first_control": self.iters_to_first_control,
            "UB": _num(self.UB),
            "LB": _num(self.LB),
            "gap": _num(self.gap),
            "n_feas_cuts": int(self.n_feas_cuts),
            "n_opt_cuts": int(self.n_opt_cuts),
            "solve_time_ns": int(self.solve_time_ns),
            "status": self.status,
        }


def _num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return float(x)


def _solve_master(cuts: InstantiatedCuts, settings: GbdSettings, modes: StepModeList):
    if settings.master == "enum":
        return solve_enumeration(cuts, modes, settings.enum_cap)
    if settings.master != "greedy":
        raise ValueError(f"unknown master mode {settings.master!r}")
    return solve_greedy(cuts, modes, lookahead=settings.lookahead,
                        backtrack_budget=settings.backtrack_budget, enum_cap=settings.enum_cap,
                        starts=settings.greedy_starts, sticky=settings.sticky_ties)


def gbd_solve(problem: MldProblem, theta, warm_buffer: CutBuffer | None = None,
              settings: GbdSettings | None = None, G_a: float | None = None,
              I_max: int | None = None, master_mode: str | None = None,
              qp_hints: dict | None = None) -> GbdResult:
    """Benders loop for one parameter vector, warm-started from a cut buffer."""
    settings = GbdSettings() if settings is None else settings
    if G_a is not None or I_max is not None or master_mode is not None:
        settings = GbdSettings(**{**settings.__dict__,
                                  **({"G_a": G_a} if G_a is not None else {}),
                                  **({"I_max": I_max} if I_max is not None else {}),
                                  **({"master": master_mode} if master_mode is not None else {})})
    modes = settings.modes or StepModeList.all_binary(problem.ndelta)
    t0 = time.perf_counter_ns()
    theta_vec = theta_vector(problem, theta)
    if warm_buffer is not None:
        cuts = instantiate(warm_buffer, problem, theta_vec)
    else:
        cuts = InstantiatedCuts(problem.N, problem.ndelta)
    exact = settings.master == "enum"

    LB, UB = -math.inf, math.inf
    best = None  # (solution, delta, iteration index)
    new_farkas, new_optimal = [], []
    # index of the iteration (1-based) producing each dual object
    farkas_iter, optimal_iter = [], []
    history = []
    seen = set()
    status = None
    backtracks = 0
    rejected = 0
    i = 0
    while True:
        try:
            msol = _solve_master(cuts, settings, modes)
        except BacktrackBudgetExceeded:
            msol = None
            status = GAP_NOT_CLOSED if best is not None else NO_CONTROL
            break
        if msol is None:
            status = MASTER_INFEASIBLE
            break
        backtracks += msol.backtracks
        if cuts.n_opt > 0:
            LB = msol.m_star
        if gap(UB, LB) < settings.G_a:
            status = OPTIMAL
            break
        if i >= settings.I_max:
            status = GAP_NOT_CLOSED if best is not None else NO_CONTROL
            break
        if best is not None and LB >= UB:
            # a heuristic master crossed the bounds; no further progress is possible
            status = GAP_NOT_CLOSED
            break
        delta = msol.delta
        key = delta.astype(np.int8).tobytes()
        if key in seen:
            status = GAP_NOT_CLOSED if best is not None else NO_CONTROL
            break
        seen.add(key)
        qp = stack(problem, theta_vec, delta)
        hint = qp_hints.get(key) if (qp_hints is not None and settings.use_qp_hint) else None
        res = solve_qp(qp, working_set_hint=hint)
        i += 1
        rec = IterationRecord(delta.copy(), msol.m_star, not isinstance(res, FarkasCertificate), LB=LB)
        if isinstance(res, FarkasCertificate):
            if settings.earliest_certificates:
                res = earliest_certificate(problem, theta_vec, delta, res)
            frec = farkas_record(res, problem, theta_vec, delta)
            new_farkas.append(frec)
            farkas_iter.append(i)
            cuts.add_feasibility(list(frec.cuts), theta_vec)
        else:
            if qp_hints is not None:
                qp_hints[key] = res.working_set
            rec.v = res.v
            if res.v < UB:
                UB = res.v
                best = (res, delta.copy(), i)
            try:
                orec = optimal_record(res, problem, theta_vec, delta)
            except CutError:
                # duals too ill-conditioned to trust; the primal point still counts for the upper bound
                rejected += 1
            else:
                new_optimal.append(orec)
                optimal_iter.append(i)
                cuts.add_optimality([orec.cut], theta_vec)
        rec.UB = UB
        history.append(rec)
    elapsed = time.perf_counter_ns() - t0

    if best is None:
        u_star = u_traj = z_star = delta_star = None
        first = None
        stored_f, stored_o = list(new_farkas), list(new_optimal)
    else:
        sol, delta_star, first = best
        z_star = sol.z_star
        _, u_traj = problem.split(z_star)
        u_star = u_traj[0].copy()
        # keep only what reproduces the first proposal of the returned trajectory
        last = first if settings.store_inclusive else first - 1
        stored_f = [r for r, it in zip(new_farkas, farkas_iter) if it <= last]
        stored_o = [r for r, it in zip(new_optimal, optimal_iter) if it <= last]
    return GbdResult(
        u_star=u_star, u_traj=u_traj, z_star=z_star, delta_star=delta_star,
        UB=UB, LB=LB, iters=i, iters_to_first_control=first,
        new_farkas=new_farkas, new_optimal=new_optimal,
        stored_farkas=stored_f, stored_optimal=stored_o,
        status=status, lb_certified=exact,
        n_feas_cuts=cuts.n_feas, n_opt_cuts=cuts.n_opt, solve_time_ns=elapsed,
        master_backtracks=backtracks, rejected_duals=rejected, history=history,
    )


def run_cold(problem: MldProblem, theta, G_a: float = 0.1, I_max: int = 5,
             settings: GbdSettings | None = None) -> GbdResult:
    """Benders solve with no prior cuts."""
    settings = GbdSettings() if settings is None else settings
    return gbd_solve(problem, theta, None, settings, G_a=G_a, I_max=I_max)


def mpc_step(problem: MldProblem, theta, buffer: CutBuffer, settings: GbdSettings | None = None,
             qp_hints: dict | None = None):
    """One receding-horizon step: warm-started solve, control to apply, and buffer update."""
    settings = GbdSettings() if settings is None else settings
    buffer.bind(problem)
    result = gbd_solve(problem, theta, buffer, settings, qp_hints=qp_hints)
    u0 = result.u_star if result.u_star is not None else np.zeros(problem.nu)
    buffer.store(result.stored_farkas, result.stored_optimal)
    return u0, result, buffer


class MpcController:
    """Receding-horizon controller holding a persistent cut buffer.

    In ``cold`` mode every solve starts from an empty buffer.
    """

    def __init__(self, problem: MldProblem, settings: GbdSettings, K_feas=None, K_opt=None,
                 epsilon=0.0, alpha=0.0, warm: bool = True):
        self.problem = problem
        self.settings = settings
        self.warm = warm
        self.buffer = CutBuffer(K_feas, K_opt, epsilon, alpha, problem=problem)
        self.qp_hints: dict = {}

    def __call__(self, theta):
        if self.warm:
            return mpc_step(self.problem, theta, self.buffer, self.settings, self.qp_hints)[:2]
        result = gbd_solve(self.problem, theta, None, self.settings, qp_hints=self.qp_hints)
        u0 = result.u_star if result.u_star is not None else np.zeros(self.problem.nu)
        return u0, result


def brute_force_miqp(problem: MldProblem, theta, modes: StepModeList | None = None):
    """Enumerate every binary trajectory and solve its subproblem; returns (cost, delta)."""
    modes = modes or StepModeList.all_binary(problem.ndelta)
    theta_vec = theta_vector(problem, theta)
    M = len(modes)
    best_v, best_d = math.inf, None
    for code in range(M ** problem.N):
        digits = [(code // M ** (problem.N - 1 - k)) % M for k in range(problem.N)]
        delta = modes.modes[digits]
        res = solve_qp(stack(problem, theta_vec, as_delta(problem, delta)))
        if not isinstance(res, FarkasCertificate) and res.v < best_v:
            best_v, best_d = res.v, delta.copy()
    return best_v, best_d
