"""Small random MLD instances for oracle comparison against brute-force enumeration."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..gbd import GbdSettings, brute_force_miqp, gbd_solve
from ..mld import MldProblem, ParameterVector


@dataclass
class RandomMiqpSpec:
    N_max: int = 5
    nx_max: int = 3
    nu_max: int = 2
    ndelta_max: int = 2
    extra_rows_max: int = 3
    grid_max: int = 1024  # cap on (2**ndelta)**N so enumeration stays cheap


def random_instance(rng: np.random.Generator, spec: RandomMiqpSpec | None = None):
    """Random stable-ish MLD problem with input boxes and binary-dependent mixed rows.

    Returns (problem, theta).  Some binary trajectories are infeasible by
    construction, so feasibility cuts appear; the whole instance may be
    infeasible, in which case both solvers must agree on that.
    """
    s = spec or RandomMiqpSpec()
    nx = int(rng.integers(1, s.nx_max + 1))
    nu = int(rng.integers(1, s.nu_max + 1))
    nd = int(rng.integers(1, s.ndelta_max + 1))
    N_cap = max(1, min(s.N_max, int(math.log(s.grid_max) / math.log(2 ** nd))))
    N = int(rng.integers(1, N_cap + 1))
    E = rng.normal(size=(nx, nx))
    E *= rng.uniform(0.5, 1.1) / max(np.abs(np.linalg.eigvals(E)).max(), 1e-6)
    F = rng.normal(size=(nx, nu))
    G = 0.5 * rng.normal(size=(nx, nd))
    H1, H2, H3, rhs = [], [], [], []
    umax = rng.uniform(0.5, 2.0)
    for j in range(nu):
        for sgn in (1.0, -1.0):
            e = np.zeros(nu)
            e[j] = sgn
            H1.append(np.zeros(nx))
            H2.append(e)
            H3.append(np.zeros(nd))
            rhs.append(umax)
    for _ in range(int(rng.integers(1, s.extra_rows_max + 1))):
        H1.append(rng.normal(size=nx))
        H2.append(rng.normal(size=nu))
        H3.append(2.0 * rng.normal(size=nd))
        rhs.append(rng.uniform(0.2, 1.5))
    A = rng.normal(size=(nx, nx))
    B = rng.normal(size=(nu, nu))
    Q = A @ A.T + 0.1 * np.eye(nx)
    R = B @ B.T + 0.1 * np.eye(nu)
    QN = 2.0 * Q
    prob = MldProblem(E=E, F=F, G=G, H1=np.array(H1), H2=np.array(H2), H3=np.array(H3),
                      Q=Q, R=R, QN=QN, xg=np.zeros(nx), N=N)
    prob.meta = {"kind": "random-miqp"}
    theta_bar = np.tile(np.array(rhs), (N, 1)) + 0.1 * rng.uniform(size=(N, len(rhs)))
    theta = ParameterVector(rng.normal(scale=0.5, size=nx), theta_bar)
    return prob, theta


def rel_dev(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return 0.0
    if math.isinf(a) or math.isinf(b):
        return math.inf
    return abs(a - b) / max(abs(b), 1e-12)


@dataclass
class OracleRow:
    index: int
    gbd_cost: float
    oracle_cost: float
    rel_dev: float
    iters: int
    status: str
    result: object = None


def oracle_suite(count: int, seed: int = 0, G_a: float = 1e-6, I_max: int = 10_000,
                 spec: RandomMiqpSpec | None = None, keep_results: bool = False):
    """Exact-master GBD against brute force on ``count`` seeded instances.

    Returns (rows, elapsed seconds, list of (problem, theta) instances).
    """
    rng = np.random.default_rng(seed)
    rows, instances = [], []
    t0 = time.perf_counter()
    settings = GbdSettings(G_a=G_a, I_max=I_max, master="enum")
    for i in range(count):
        prob, theta = random_instance(rng, spec)
        res = gbd_solve(prob, theta, None, settings)
        v_bf, _ = brute_force_miqp(prob, theta)
        rows.append(OracleRow(i, res.UB, v_bf, rel_dev(res.UB, v_bf), res.iters, res.status,
                              res if keep_results else None))
        instances.append((prob, theta))
    return rows, time.perf_counter() - t0, instances
