"""Feasibility and optimality cuts built from subproblem duals, and the bounded cut store."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .mld import MldProblem, as_delta, stack, theta_vector
from .qp import FarkasCertificate, QpSolution, dual_value, verify_farkas

NONZERO_TOL = 1e-12


class CutError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeasibilityCut:
    """Lambda'theta + V'delta >= 0 must hold for every feasible (theta, delta)."""

    Lambda: np.ndarray
    V: np.ndarray  # (N, ndelta)
    last_active_step: int  # bucket index: last step with a nonzero V block
    shift: int = 0

    def value(self, theta_vec, delta) -> float:
        return float(self.Lambda @ theta_vec + np.sum(self.V * delta))


@dataclass(frozen=True, eq=False)
class OptimalityCut:
    """v(theta, delta) >= C - Lambda'theta - V'delta."""

    Lambda: np.ndarray
    V: np.ndarray
    C: float
    v_q: float
    theta_q: np.ndarray
    delta_q: np.ndarray

    def value(self, theta_vec, delta) -> float:
        return float(self.C - self.Lambda @ theta_vec - np.sum(self.V * delta))


@dataclass(frozen=True, eq=False)
class FarkasRecord:
    cert: FarkasCertificate
    cuts: tuple

    @property
    def ray(self) -> np.ndarray:
        return self.cert.ray


@dataclass(frozen=True, eq=False)
class OptimalRecord:
    nu: np.ndarray
    lam: np.ndarray
    cut: OptimalityCut

    @property
    def point(self) -> np.ndarray:
        return np.concatenate([self.nu, self.lam])


def _blocks(problem: MldProblem, nu, lam):
    nx, nc, N = problem.nx, problem.nc, problem.N
    return np.asarray(nu, float).reshape(N + 1, nx), np.asarray(lam, float).reshape(N, nc)


def cut_coefficients(problem: MldProblem, nu, lam) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients with b'nu + d'lambda = Lambda'theta + V'delta."""
    nub, lamb = _blocks(problem, nu, lam)
    Lambda = np.concatenate([nub[0], lamb.ravel()])
    V = nub[1:] @ problem.G - lamb @ problem.H3
    return Lambda, V


def last_nonzero_step(V: np.ndarray) -> int:
    nz = np.flatnonzero(np.abs(V).max(axis=1) > NONZERO_TOL)
    return int(nz[-1]) if nz.size else 0


def support_end(problem: MldProblem, nu, lam) -> int:
    """Largest k with lambda[k] or nu[k+1] nonzero; shifts beyond this are all zero."""
    nub, lamb = _blocks(problem, nu, lam)
    act = (np.abs(lamb).max(axis=1, initial=0.0) > NONZERO_TOL) | (
        np.abs(nub[1:]).max(axis=1, initial=0.0) > NONZERO_TOL
    )
    idx = np.flatnonzero(act)
    return int(idx[-1]) if idx.size else 0


def shift_certificate(problem: MldProblem, cert: FarkasCertificate, m: int) -> FarkasCertificate:
    """Move every dual block m steps earlier and zero-pad the tail."""
    nub, lamb = _blocks(problem, cert.nu_tilde, cert.lambda_tilde)
    N = problem.N
    nu_m = np.zeros_like(nub)
    lam_m = np.zeros_like(lamb)
    nu_m[: N + 1 - m] = nub[m:]
    lam_m[: N - m] = lamb[m:]
    return FarkasCertificate(nu_m.ravel(), lam_m.ravel())


def build_feasibility_cuts(cert: FarkasCertificate, problem: MldProblem, theta, delta) -> list[FeasibilityCut]:
    """The unshifted cut plus every nonzero time-shift of the certificate."""
    qp = stack(problem, theta, delta)
    if not verify_farkas(cert, qp.A, qp.b, qp.C, qp.d):
        raise CutError("certificate does not verify against the subproblem it came from")
    M = min(support_end(problem, cert.nu_tilde, cert.lambda_tilde), problem.N - 1)
    cuts = []
    for m in range(M + 1):
        c = cert if m == 0 else shift_certificate(problem, cert, m)
        Lambda, V = cut_coefficients(problem, c.nu_tilde, c.lambda_tilde)
        cuts.append(FeasibilityCut(Lambda, V, last_nonzero_step(V), m))
    return cuts


def build_optimality_cut(sol: QpSolution, problem: MldProblem, theta, delta, tol=1e-6) -> OptimalityCut:
    """Affine lower bound on the subproblem value from the duals of one solve.

    The constant is anchored at the dual function value rather than at v, so
    the cut stays a valid bound by weak duality even when ill-conditioning
    leaves a small strong-duality residual; with exact duals the two agree.
    """
    theta_vec = theta_vector(problem, theta)
    dl = as_delta(problem, delta)
    qp = stack(problem, theta_vec, dl)
    g = dual_value(sol.nu_star, sol.lambda_star, qp)
    if not np.isfinite(g) or g > sol.v + tol * (1.0 + abs(sol.v)):
        raise CutError(f"dual value {g:.6e} exceeds the primal value {sol.v:.6e}; the duals are unusable")
    Lambda, V = cut_coefficients(problem, sol.nu_star, sol.lambda_star)
    C = g + float(Lambda @ theta_vec) + float(np.sum(V * dl))
    return OptimalityCut(Lambda, V, C, sol.v, theta_vec.copy(), dl.copy())


def farkas_record(cert, problem, theta, delta) -> FarkasRecord:
    return FarkasRecord(cert, tuple(build_feasibility_cuts(cert, problem, theta, delta)))


def optimal_record(sol: QpSolution, problem, theta, delta) -> OptimalRecord:
    cut = build_optimality_cut(sol, problem, theta, delta)
    return OptimalRecord(np.asarray(sol.nu_star).copy(), np.asarray(sol.lambda_star).copy(), cut)


def angle(u, v) -> float:
    u = np.asarray(u, float).ravel()
    v = np.asarray(v, float).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise CutError("angle is undefined for a zero vector")
    return float(np.arccos(np.clip(u @ v / (nu * nv), -1.0, 1.0)))


# -- instantiation -------------------------------------------------------------


@dataclass
class InstantiatedCuts:
    """Cut rows evaluated at one parameter vector.

    Feasibility rows read sum_k feas_V[p, k] . delta[k] >= -feas_S[p];
    optimality rows give z0 >= opt_S[q] - sum_k opt_V[q, k] . delta[k].
    """

    N: int
    ndelta: int
    feas_V: np.ndarray = None
    feas_S: np.ndarray = None
    feas_bucket: np.ndarray = None
    opt_V: np.ndarray = None
    opt_S: np.ndarray = None

    def __post_init__(self):
        if self.feas_V is None:
            self.feas_V = np.zeros((0, self.N, self.ndelta))
            self.feas_S = np.zeros(0)
            self.feas_bucket = np.zeros(0, dtype=int)
        if self.opt_V is None:
            self.opt_V = np.zeros((0, self.N, self.ndelta))
            self.opt_S = np.zeros(0)

    @property
    def n_feas(self) -> int:
        return self.feas_S.size

    @property
    def n_opt(self) -> int:
        return self.opt_S.size

    def add_feasibility(self, cuts, theta_vec) -> None:
        if not cuts:
            return
        V = np.stack([c.V for c in cuts])
        S = np.array([c.Lambda @ theta_vec for c in cuts])
        b = np.array([c.last_active_step for c in cuts], dtype=int)
        self.feas_V = np.concatenate([self.feas_V, V])
        self.feas_S = np.concatenate([self.feas_S, S])
        self.feas_bucket = np.concatenate([self.feas_bucket, b])

    def add_optimality(self, cuts, theta_vec) -> None:
        if not cuts:
            return
        V = np.stack([c.V for c in cuts])
        S = np.array([c.C - c.Lambda @ theta_vec for c in cuts])
        self.opt_V = np.concatenate([self.opt_V, V])
        self.opt_S = np.concatenate([self.opt_S, S])

    def feasible(self, delta, tol=1e-9) -> bool:
        if self.n_feas == 0:
            return True
        lhs = np.einsum("pkd,kd->p", self.feas_V, delta)
        return bool(np.all(lhs >= -self.feas_S - tol))

    def objective(self, delta) -> float:
        if self.n_opt == 0:
            return 0.0
        return float(np.max(self.opt_S - np.einsum("qkd,kd->q", self.opt_V, delta)))


# -- storage -------------------------------------------------------------------


class CutBuffer:
    """FIFO stores of Farkas rays and optimal duals with cone and ball deduplication.

    A candidate ray is rejected when its angle to some stored ray is below
    ``alpha``; a candidate optimal dual is rejected when it lies within
    Euclidean distance ``epsilon`` of a stored one.
    """

    def __init__(self, K_feas=None, K_opt=None, epsilon=0.0, alpha=0.0, problem: MldProblem | None = None):
        self.K_feas = K_feas
        self.K_opt = K_opt
        self.epsilon = float(epsilon)
        self.alpha = float(alpha)
        self.farkas: list[FarkasRecord] = []
        self.optimal: list[OptimalRecord] = []
        self._lock = threading.Lock()
        self._stage_fp = None
        self._cost_fp = None
        self.evicted_feas = 0
        self.evicted_opt = 0
        if problem is not None:
            self.bind(problem)

    def bind(self, problem: MldProblem) -> None:
        """Attach to a problem, flushing whatever its matrices or goal invalidate."""
        s, c = problem.stage_fingerprint(), problem.cost_fingerprint()
        with self._lock:
            if self._stage_fp is not None and s != self._stage_fp:
                self.farkas = []
                self.optimal = []
            elif self._cost_fp is not None and c != self._cost_fp:
                self.optimal = []
            self._stage_fp, self._cost_fp = s, c

    def snapshot(self) -> tuple[tuple, tuple]:
        with self._lock:
            return tuple(self.farkas), tuple(self.optimal)

    def copy(self) -> "CutBuffer":
        b = CutBuffer(self.K_feas, self.K_opt, self.epsilon, self.alpha)
        b.farkas, b.optimal = (list(x) for x in self.snapshot())
        b._stage_fp, b._cost_fp = self._stage_fp, self._cost_fp
        return b

    def __len__(self):
        return len(self.farkas) + len(self.optimal)

    def _novel_ray(self, ray) -> bool:
        return all(angle(ray, r.ray) >= self.alpha for r in self.farkas)

    def _novel_point(self, point) -> bool:
        return all(np.linalg.norm(point - r.point) >= self.epsilon for r in self.optimal)

    def store(self, new_farkas=(), new_optimal=()) -> "CutBuffer":
        with self._lock:
            for rec in new_farkas:
                if self._novel_ray(rec.ray):
                    self.farkas.append(rec)
                    if self.K_feas is not None and len(self.farkas) > self.K_feas:
                        drop = len(self.farkas) - self.K_feas
                        del self.farkas[:drop]
                        self.evicted_feas += drop
            for rec in new_optimal:
                if self._novel_point(rec.point):
                    self.optimal.append(rec)
                    if self.K_opt is not None and len(self.optimal) > self.K_opt:
                        drop = len(self.optimal) - self.K_opt
                        del self.optimal[:drop]
                        self.evicted_opt += drop
        return self

    def feasibility_cuts(self):
        farkas, _ = self.snapshot()
        return [c for rec in farkas for c in rec.cuts]

    def optimality_cuts(self):
        _, opt = self.snapshot()
        return [rec.cut for rec in opt]


def instantiate(buffer_or_cuts, problem: MldProblem, theta) -> InstantiatedCuts:
    """Evaluate stored cut constants at a new parameter vector."""
    theta_vec = theta_vector(problem, theta)
    out = InstantiatedCuts(problem.N, problem.ndelta)
    if isinstance(buffer_or_cuts, CutBuffer):
        farkas, opt = buffer_or_cuts.snapshot()
        feas = [c for rec in farkas for c in rec.cuts]
        optc = [rec.cut for rec in opt]
    else:
        feas, optc = buffer_or_cuts
    for c in list(feas) + list(optc):
        if c.V.shape != (problem.N, problem.ndelta) or c.Lambda.shape != (problem.ntheta,):
            raise CutError("cut dimensions do not match the problem horizon or sizes")
    out.add_feasibility(list(feas), theta_vec)
    out.add_optimality(list(optc), theta_vec)
    return out


def truncated_problem(problem: MldProblem, horizon: int) -> MldProblem:
    """Same stage matrices over a shorter horizon (cached on the problem)."""
    cache = problem.__dict__.setdefault("_prefix_cache", {})
    if horizon not in cache:
        cache[horizon] = MldProblem(problem.E, problem.F, problem.G, problem.H1, problem.H2, problem.H3,
                                    problem.Q, problem.R, problem.QN, problem.xg, horizon)
    return cache[horizon]


def earliest_certificate(problem: MldProblem, theta, delta, cert: FarkasCertificate | None = None):
    """Certificate supported on the shortest infeasible prefix of the horizon.

    Infeasibility of a prefix (steps 0..K) implies infeasibility of the whole
    problem, and the prefix certificate padded with zeros certifies the full
    stack.  Binary search over K; falls back to ``cert`` if nothing shorter
    verifies.
    """
    from .qp import phase1

    tv = theta_vector(problem, theta)
    dl = as_delta(problem, delta)
    nx, nc, N = problem.nx, problem.nc, problem.N

    def prefix_cert(K):
        sub = truncated_problem(problem, K + 1)
        th = np.concatenate([tv[:nx], tv[nx: nx + (K + 1) * nc]])
        qp = stack(sub, th, dl[: K + 1])
        res = phase1(qp.A, qp.b, qp.C, qp.d, reduction=qp._reduction)
        return res if isinstance(res, FarkasCertificate) else None

    lo, hi, best = 0, N - 1, None
    while lo < hi:
        mid = (lo + hi) // 2
        c = prefix_cert(mid)
        if c is not None:
            best, hi = (mid, c), mid
        else:
            lo = mid + 1
    if best is None or best[0] != lo:
        if lo < N - 1:
            c = prefix_cert(lo)
            if c is not None:
                best = (lo, c)
    if best is None:
        return cert
    K, c = best
    nu = np.zeros((N + 1) * nx)
    lam = np.zeros(N * nc)
    nu[: (K + 2) * nx] = c.nu_tilde
    lam[: (K + 1) * nc] = c.lambda_tilde
    full = FarkasCertificate(nu, lam).normalized()
    qp = stack(problem, tv, dl)
    if verify_farkas(full, qp.A, qp.b, qp.C, qp.d):
        return full
    return cert
