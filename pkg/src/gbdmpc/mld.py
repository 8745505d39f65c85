"""Mixed-logic dynamic (MLD) optimal-control problems and their stacked QP form.

The controller model is

    x[k+1] = E x[k] + F u[k] + G delta[k]
    H1 x[k] + H2 u[k] + H3 delta[k] <= theta_bar[k]        k = 0..N-1
    x[0] = x_in

with cost sum_k |x[k]-x_g|^2_Q + |u[k]|^2_R + |x[N]-x_g|^2_QN.  For a fixed
binary trajectory the problem is a convex QP over z = (x[0..N], u[0..N-1]).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg

PD_TOL = 1e-10


class ProblemError(ValueError):
    """Raised for malformed or unsupported MLD problem data."""


@dataclass(eq=False)
class MldProblem:
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QN: np.ndarray
    xg: np.ndarray
    N: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("E", "F", "G", "H1", "H2", "H3", "Q", "R", "QN"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        self.xg = np.atleast_1d(np.asarray(self.xg, dtype=float)).ravel()
        self.N = int(self.N)

    @property
    def nx(self) -> int:
        return self.E.shape[0]

    @property
    def nu(self) -> int:
        return self.F.shape[1]

    @property
    def ndelta(self) -> int:
        return self.G.shape[1]

    @property
    def nc(self) -> int:
        return self.H1.shape[0]

    @property
    def ntheta(self) -> int:
        return self.nx + self.N * self.nc

    @property
    def nz(self) -> int:
        return (self.N + 1) * self.nx + self.N * self.nu

    def x_index(self, k: int) -> slice:
        return slice(k * self.nx, (k + 1) * self.nx)

    def u_index(self, k: int) -> slice:
        off = (self.N + 1) * self.nx
        return slice(off + k * self.nu, off + (k + 1) * self.nu)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split a stacked decision vector into (states (N+1, nx), inputs (N, nu))."""
        nX = (self.N + 1) * self.nx
        return z[:nX].reshape(self.N + 1, self.nx), z[nX:].reshape(self.N, self.nu)

    def stage_fingerprint(self) -> str:
        """Hash of everything that fixes the constraint matrices A and C."""
        return _digest(self.N, self.E, self.F, self.G, self.H1, self.H2, self.H3)

    def cost_fingerprint(self) -> str:
        return _digest(self.Q, self.R, self.QN, self.xg)

    @cached_property
    def _structure(self) -> dict:
        validate(self)
        nx, nu, nc, N = self.nx, self.nu, self.nc, self.N
        nz = self.nz
        Qbar = scipy.linalg.block_diag(*([self.Q] * N + [self.QN] + [self.R] * N))
        z_g = np.concatenate([np.tile(self.xg, N + 1), np.zeros(N * nu)])
        A = np.zeros(((N + 1) * nx, nz))
        A[0:nx, self.x_index(0)] = np.eye(nx)
        C = np.zeros((N * nc, nz))
        for k in range(N):
            rows = slice((k + 1) * nx, (k + 2) * nx)
            A[rows, self.x_index(k + 1)] = np.eye(nx)
            A[rows, self.x_index(k)] = -self.E
            A[rows, self.u_index(k)] = -self.F
            crow = slice(k * nc, (k + 1) * nc)
            C[crow, self.x_index(k)] = self.H1
            C[crow, self.u_index(k)] = self.H2
        Qinv = scipy.linalg.block_diag(
            *([np.linalg.inv(self.Q)] * N + [np.linalg.inv(self.QN)] + [np.linalg.inv(self.R)] * N)
        )
        return {"Qbar": Qbar, "Qinv": Qinv, "z_g": z_g, "A": A, "C": C}


def _digest(*items) -> str:
    h = hashlib.sha1()
    for it in items:
        a = np.ascontiguousarray(np.asarray(it, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class ParameterVector:
    """Per-instance parameters: measured state and per-step inequality right-hand sides."""

    x_in: np.ndarray
    theta_bar: np.ndarray  # (N, nc)

    def __post_init__(self):
        self.x_in = np.atleast_1d(np.asarray(self.x_in, dtype=float)).ravel()
        self.theta_bar = np.atleast_2d(np.asarray(self.theta_bar, dtype=float))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.x_in, self.theta_bar.ravel()])

    @classmethod
    def from_vector(cls, problem: MldProblem, vec) -> "ParameterVector":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != problem.ntheta:
            raise ProblemError(f"parameter vector has length {vec.size}, expected {problem.ntheta}")
        return cls(vec[: problem.nx], vec[problem.nx :].reshape(problem.N, problem.nc))

    @classmethod
    def constant(cls, problem: MldProblem, x_in, theta_stage) -> "ParameterVector":
        """Hold one stage right-hand side constant over the horizon."""
        theta_stage = np.asarray(theta_stage, dtype=float).ravel()
        return cls(x_in, np.tile(theta_stage, (problem.N, 1)))


def theta_vector(problem: MldProblem, theta) -> np.ndarray:
    if isinstance(theta, ParameterVector):
        check_theta(problem, theta)
        return theta.vector
    vec = np.asarray(theta, dtype=float).ravel()
    if vec.size != problem.ntheta:
        raise ProblemError(f"parameter vector has length {vec.size}, expected {problem.ntheta}")
    return vec


def check_theta(problem: MldProblem, theta: ParameterVector) -> None:
    if theta.x_in.shape != (problem.nx,):
        raise ProblemError(f"x_in has shape {theta.x_in.shape}, expected ({problem.nx},)")
    if theta.theta_bar.shape != (problem.N, problem.nc):
        raise ProblemError(
            f"theta_bar has shape {theta.theta_bar.shape}, expected ({problem.N}, {problem.nc})"
        )


def as_delta(problem: MldProblem, delta) -> np.ndarray:
    """Return delta as an (N, ndelta) float array of exact zeros and ones."""
    d = np.asarray(delta, dtype=float)
    if d.size != problem.N * problem.ndelta:
        raise ProblemError(f"delta has {d.size} entries, expected {problem.N * problem.ndelta}")
    d = d.reshape(problem.N, problem.ndelta)
    if not np.all((d == 0.0) | (d == 1.0)):
        raise ProblemError("delta entries must be exactly 0 or 1")
    return d


def _is_spd(M: np.ndarray) -> bool:
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * (1 + np.abs(M).max())):
        return False
    return np.linalg.eigvalsh(0.5 * (M + M.T)).min() > PD_TOL


def validate(problem: MldProblem) -> None:
    """Reject inconsistent dimensions and weights that are not symmetric positive definite."""
    p = problem
    if p.N < 1:
        raise ProblemError(f"horizon N must be >= 1, got {p.N}")
    nx, nu, nd, nc = p.nx, p.nu, p.ndelta, p.nc
    expected = {
        "E": (nx, nx), "F": (nx, nu), "G": (nx, nd),
        "H1": (nc, nx), "H2": (nc, nu), "H3": (nc, nd),
        "Q": (nx, nx), "R": (nu, nu), "QN": (nx, nx),
    }
    for name, shape in expected.items():
        got = getattr(p, name).shape
        if got != shape:
            raise ProblemError(f"{name} has shape {got}, expected {shape}")
    if p.xg.shape != (nx,):
        raise ProblemError(f"xg has shape {p.xg.shape}, expected ({nx},)")
    for name in ("Q", "R", "QN"):
        if not _is_spd(getattr(p, name)):
            raise ProblemError(
                f"weight {name} is not symmetric positive definite; the semidefinite dual "
                "reformulation (rank-deficient objective handling) is not implemented"
            )


@dataclass
class StackedQP:
    """Dense QP  min (z-z_g)' Qbar (z-z_g)  s.t.  A z = b, C z <= d."""

    Qbar: np.ndarray
    z_g: np.ndarray
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    Qinv: np.ndarray | None = None

    @property
    def scale(self) -> float:
        return 1.0 + max(_maxabs(self.A), _maxabs(self.C), _maxabs(self.b), _maxabs(self.d))

    def cost(self, z: np.ndarray) -> float:
        e = z - self.z_g
        return float(e @ self.Qbar @ e)


def _maxabs(a: np.ndarray) -> float:
    return float(np.abs(a).max()) if a.size else 0.0


def stack_rhs(problem: MldProblem, theta, delta) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides b(x_in, delta) and d(theta_bar, delta)."""
    vec = theta_vector(problem, theta)
    dl = as_delta(problem, delta)
    nx = problem.nx
    b = np.concatenate([vec[:nx], (dl @ problem.G.T).ravel()])
    d = (vec[nx:].reshape(problem.N, problem.nc) - dl @ problem.H3.T).ravel()
    return b, d


def stack(problem: MldProblem, theta, delta) -> StackedQP:
    """Stack the subproblem for a fixed binary trajectory into dense QP form."""
    s = problem._structure
    b, d = stack_rhs(problem, theta, delta)
    qp = StackedQP(s["Qbar"], s["z_g"], s["A"], b, s["C"], d, s["Qinv"])
    if "reduction" not in s:
        from .qp import EqualityReduction

        s["reduction"] = EqualityReduction(s["A"], problem.nz)
    qp._reduction = s["reduction"]
    return qp


def solve_dare(E, F, Q, R, tol: float = 1e-9, max_iter: int = 200000) -> np.ndarray:
    """Solve P = Q + E'PE - E'PF (R + F'PF)^-1 F'PE.

    The residual tolerance is absolute in Frobenius norm for ||P|| <= 1 and
    relative above that.
    """
    E, F, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (E, F, Q, R))

    def step(P):
        S = R + F.T @ P @ F
        K = np.linalg.solve(S, F.T @ P @ E)
        Pn = Q + E.T @ P @ E - E.T @ P @ F @ K
        return 0.5 * (Pn + Pn.T)

    def residual(P):
        return np.linalg.norm(step(P) - P, "fro")

    def ok(P):
        return residual(P) <= tol * max(1.0, np.linalg.norm(P, "fro"))

    P = None
    try:
        P = scipy.linalg.solve_discrete_are(E, F, Q, R)
        P = 0.5 * (P + P.T)
    except (np.linalg.LinAlgError, ValueError):
        P = None
    if P is not None and np.all(np.isfinite(P)):
        for _ in range(50):
            if ok(P):
                return P
            P = step(P)
    P = Q.copy()
    for _ in range(max_iter):
        Pn = step(P)
        if not np.all(np.isfinite(Pn)):
            break
        if np.linalg.norm(Pn - P, "fro") <= 0.1 * tol * max(1.0, np.linalg.norm(Pn, "fro")):
            if ok(Pn):
                return Pn
        P = Pn
    raise RuntimeError("Riccati iteration did not converge; check that (E, F) is stabilizable")


# -- problem file format -----------------------------------------------------

_MATRICES = ("E", "F", "G", "H1", "H2", "H3", "Q", "R", "QN")


def problem_to_dict(problem: MldProblem) -> dict:
    return {
        "dims": {"nx": problem.nx, "nu": problem.nu, "ndelta": problem.ndelta,
                 "nc": problem.nc, "N": problem.N},
        **{name: getattr(problem, name).ravel().tolist() for name in _MATRICES},
        "xg": problem.xg.tolist(),
    }


def problem_from_dict(data: dict) -> MldProblem:
    try:
        dims = data["dims"]
        nx, nu, nd, nc, N = (int(dims[k]) for k in ("nx", "nu", "ndelta", "nc", "N"))
    except KeyError as exc:
        raise ProblemError(f"problem file is missing key {exc}") from None
    shapes = {"E": (nx, nx), "F": (nx, nu), "G": (nx, nd), "H1": (nc, nx), "H2": (nc, nu),
              "H3": (nc, nd), "Q": (nx, nx), "R": (nu, nu), "QN": (nx, nx)}
    mats = {}
    for name, shape in shapes.items():
        if name not in data:
            raise ProblemError(f"problem file is missing key '{name}'")
        arr = np.asarray(data[name], dtype=float)
        if arr.size != shape[0] * shape[1]:
            raise ProblemError(f"{name} has {arr.size} entries, expected {shape[0]}x{shape[1]}")
        mats[name] = arr.reshape(shape)
    if "xg" not in data:
        raise ProblemError("problem file is missing key 'xg'")
    problem = MldProblem(**mats, xg=np.asarray(data["xg"], dtype=float), N=N)
    validate(problem)
    return problem


def load_problem(path) -> MldProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))


def save_problem(problem: MldProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=1))
