"""Condensed (state-eliminated) form of the subproblem and Lipschitz/gap-bound checks.

Within a fixed optimal active set the subproblem value is a quadratic form
p' H p in p = (theta, delta).  These tools build H and use it to bound how
far an optimality cut can sit below the true value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cuts import OptimalityCut
from .mld import MldProblem, as_delta, stack, theta_vector, validate
from .qp import FarkasCertificate, solve_qp


class DiagnosticsError(ValueError):
    pass


@dataclass
class CondensedForm:
    problem: MldProblem
    Phi: np.ndarray
    Gamma_u: np.ndarray
    Gamma_d: np.ndarray
    M_x: np.ndarray
    M_u: np.ndarray
    M_d: np.ndarray
    M_xu: np.ndarray
    M_du: np.ndarray
    M_xd: np.ndarray
    N_u: np.ndarray
    N_theta: np.ndarray
    N_d: np.ndarray
    W_theta: np.ndarray
    W_d: np.ndarray
    H_const: np.ndarray
    theta_shift: np.ndarray
    M_u_inv: np.ndarray

    @property
    def ntheta(self) -> int:
        return self.problem.ntheta

    def point(self, theta, delta) -> np.ndarray:
        """Stacked (theta - shift, delta) vector in goal-centred coordinates."""
        tv = theta_vector(self.problem, theta) - self.theta_shift
        return np.concatenate([tv, as_delta(self.problem, delta).ravel()])

    def objective(self, theta, delta, U) -> float:
        """Cost of input sequence U written through the condensed matrices."""
        tv = theta_vector(self.problem, theta) - self.theta_shift
        x = tv[: self.problem.nx]
        dl = as_delta(self.problem, delta).ravel()
        U = np.asarray(U, float).ravel()
        return float(x @ self.M_x @ x + U @ self.M_u @ U + dl @ self.M_d @ dl
                     + x @ self.M_xu @ U + x @ self.M_xd @ dl + dl @ self.M_du @ U)

    def inputs_feasible(self, theta, delta, U, tol=1e-9) -> bool:
        p = self.point(theta, delta)
        rhs = self.N_theta @ p[: self.ntheta] + self.N_d @ p[self.ntheta:]
        return bool(np.all(self.N_u @ np.asarray(U, float).ravel() <= rhs + tol))


def condense(problem: MldProblem) -> CondensedForm:
    """Eliminate the states and complete the square in the inputs."""
    validate(problem)
    p = problem
    nx, nu, nd, nc, N = p.nx, p.nu, p.ndelta, p.nc, p.N
    if np.abs(p.E @ p.xg - p.xg).max(initial=0.0) > 1e-9 * (1.0 + np.abs(p.xg).max(initial=0.0)):
        raise DiagnosticsError("the goal state must be a fixed point of E to centre the problem on it")
    Epow = [np.eye(nx)]
    for _ in range(N):
        Epow.append(p.E @ Epow[-1])
    Phi = np.vstack(Epow)
    Gu = np.zeros(((N + 1) * nx, N * nu))
    Gd = np.zeros(((N + 1) * nx, N * nd))
    for k in range(1, N + 1):
        for j in range(k):
            Gu[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = Epow[k - 1 - j] @ p.F
            Gd[k * nx:(k + 1) * nx, j * nd:(j + 1) * nd] = Epow[k - 1 - j] @ p.G
    Qh = scipy.linalg.block_diag(*([p.Q] * N + [p.QN]))
    Rh = scipy.linalg.block_diag(*([p.R] * N))
    M_x = Phi.T @ Qh @ Phi
    M_u = Gu.T @ Qh @ Gu + Rh
    M_d = Gd.T @ Qh @ Gd
    M_xu = 2.0 * Phi.T @ Qh @ Gu
    M_du = 2.0 * Gd.T @ Qh @ Gu
    M_xd = 2.0 * Phi.T @ Qh @ Gd

    Cx = np.zeros((N * nc, (N + 1) * nx))
    Cu = np.zeros((N * nc, N * nu))
    H3b = np.zeros((N * nc, N * nd))
    for k in range(N):
        Cx[k * nc:(k + 1) * nc, k * nx:(k + 1) * nx] = p.H1
        Cu[k * nc:(k + 1) * nc, k * nu:(k + 1) * nu] = p.H2
        H3b[k * nc:(k + 1) * nc, k * nd:(k + 1) * nd] = p.H3
    N_u = Cx @ Gu + Cu
    N_theta = np.hstack([-Cx @ Phi, np.eye(N * nc)])
    N_d = -(Cx @ Gd + H3b)
    M_u_inv = np.linalg.inv(M_u)
    Px = np.hstack([np.eye(nx), np.zeros((nx, N * nc))])  # x_in = Px theta
    W_theta = N_theta + 0.5 * N_u @ M_u_inv @ (M_xu.T @ Px)
    W_d = N_d + 0.5 * N_u @ M_u_inv @ M_du.T

    # value = p' H_const p + z' M_u z with z the shifted input
    Kc = 0.5 * M_u_inv @ np.hstack([M_xu.T @ Px, M_du.T])  # c = Kc p
    nth = nx + N * nc
    Hc = np.zeros((nth + N * nd, nth + N * nd))
    Hc[:nth, :nth] = Px.T @ M_x @ Px
    Hc[nth:, nth:] = M_d
    Hc[:nth, nth:] = 0.5 * Px.T @ M_xd
    Hc[nth:, :nth] = Hc[:nth, nth:].T
    Hc -= Kc.T @ M_u @ Kc
    Hc = 0.5 * (Hc + Hc.T)
    shift = np.concatenate([p.xg, np.tile(p.H1 @ p.xg, N)])
    return CondensedForm(p, Phi, Gu, Gd, M_x, M_u, M_d, M_xu, M_du, M_xd,
                         N_u, N_theta, N_d, W_theta, W_d, Hc, shift, M_u_inv)


def build_H(cond: CondensedForm, active_set) -> np.ndarray:
    """Quadratic form of the value function on the region with this active set."""
    act = np.asarray(sorted(int(i) for i in active_set), dtype=int)
    if act.size == 0:
        return cond.H_const.copy()
    Nt = cond.N_u[act]
    if np.linalg.matrix_rank(Nt) < act.size:
        raise DiagnosticsError(
            "active constraint rows are linearly dependent; the value-function formula needs independent rows"
        )
    Wt = np.hstack([cond.W_theta[act], cond.W_d[act]])
    S = Nt @ cond.M_u_inv @ Nt.T
    H = cond.H_const + Wt.T @ np.linalg.solve(S, Wt)
    return 0.5 * (H + H.T)


def value_from_H(cond: CondensedForm, H: np.ndarray, theta, delta) -> float:
    p = cond.point(theta, delta)
    return float(p @ H @ p)


def lipschitz_bound(H: np.ndarray, point0, delta_p=None, samples: int = 5) -> float:
    """L = 2 ||p0' H|| maximised over points p0 on the segment [point0, point0 + delta_p]."""
    p0 = np.asarray(point0, float).ravel()
    if delta_p is None:
        return 2.0 * float(np.linalg.norm(H @ p0))
    dp = np.asarray(delta_p, float).ravel()
    ts = np.linspace(0.0, 1.0, max(samples, 2))
    return max(2.0 * float(np.linalg.norm(H @ (p0 + t * dp))) for t in ts)


def active_set_of(problem: MldProblem, theta, delta):
    res = solve_qp(stack(problem, theta, delta))
    if isinstance(res, FarkasCertificate):
        raise DiagnosticsError("subproblem is infeasible at this (theta, delta)")
    return res


def segment_lipschitz(cond: CondensedForm, theta1, delta1, theta2, delta2, samples=5):
    """Check the shared active set of both endpoints and return (L, H, v1, v2)."""
    s1 = active_set_of(cond.problem, theta1, delta1)
    s2 = active_set_of(cond.problem, theta2, delta2)
    if set(s1.active_set.tolist()) != set(s2.active_set.tolist()):
        raise DiagnosticsError("endpoints have different active sets")
    H = build_H(cond, s1.active_set)
    p1, p2 = cond.point(theta1, delta1), cond.point(theta2, delta2)
    return lipschitz_bound(H, p1, p2 - p1, samples), H, s1.v, s2.v


@dataclass
class GapBound:
    g_q: float
    bound: float
    bound_short: float
    ok: bool


def gap_bound_check(cut: OptimalityCut, problem: MldProblem, theta, delta, L: float,
                    L_delta: float, tol: float = 1e-6) -> GapBound:
    """Gap between the re-solved value and the cut, and its Lipschitz-based upper bound.

    ``bound`` uses sqrt((N+1) n_delta) for the binary displacement and
    ``bound_short`` uses sqrt(N n_delta), the actual length of delta.
    """
    tv = theta_vector(problem, theta)
    dl = as_delta(problem, delta)
    res = solve_qp(stack(problem, tv, dl))
    if isinstance(res, FarkasCertificate):
        raise DiagnosticsError("subproblem is infeasible at this (theta, delta)")
    g = res.v - cut.value(tv, dl)
    dth = tv - cut.theta_q
    common = L * float(np.linalg.norm(dth)) + float(cut.Lambda @ dth) + float(np.abs(cut.V).sum())
    nd = problem.ndelta
    bound = common + L_delta * math.sqrt((problem.N + 1) * nd)
    short = common + L_delta * math.sqrt(problem.N * nd)
    slack = tol * (1.0 + abs(res.v))
    ok = (g >= -slack) and (g <= short + slack) and (g <= bound + slack)
    return GapBound(float(g), float(bound), float(short), bool(ok))
