"""Cart-pole balancing between two moving soft walls.

State (cart position, pole angle from upright, cart velocity, angular velocity);
inputs (cart force, right-wall contact force, left-wall contact force).  The
pole tip sits at horizontal position x1 - l sin(x2); the right wall is at +d1
and the left wall at -d2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..master import StepModeList
from ..mld import MldProblem, ParameterVector, solve_dare

A_SIGN = (1.0, -1.0)


@dataclass
class CartPoleParams:
    m_c: float = 1.0
    m_p: float = 0.4
    l: float = 0.6
    g: float = 9.81
    k: tuple = (50.0, 50.0)
    f_max: float = 20.0
    angle_max: float = np.pi / 2
    x_max: float = 0.5
    v_max: float = 5.0
    omega_max: float = 10.0
    lam_max: float = 100.0
    d_max: float = 0.5
    d_min: float = 0.02
    dt: float = 0.02
    Q: tuple = (1.0, 50.0, 1.0, 50.0)
    R: tuple = (0.1, 0.1, 0.1)
    disturbance_std: float = 8.0
    x2_init_deg: float = 10.0
    bigM_margin: float = 2.0

    def __post_init__(self):
        vals = [self.m_c, self.m_p, self.l, self.f_max, self.angle_max, self.x_max, self.v_max,
                self.omega_max, self.lam_max, self.dt, *self.k]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("cart-pole parameters must be positive and finite")


def accelerations(params: CartPoleParams, state, f, lam1, lam2, tau=0.0):
    """Nonlinear cart and pole accelerations (massless rod, point mass at the tip)."""
    x1, th, _, om = state
    mc, mp, l, g = params.m_c, params.m_p, params.l, params.g
    F_tip = lam2 - lam1
    c, s = np.cos(th), np.sin(th)
    Mmat = np.array([[mc + mp, -mp * l * c], [-mp * l * c, mp * l * l]])
    rhs = np.array([f + F_tip - mp * l * s * om * om, mp * g * l * s - F_tip * l * c + tau])
    return np.linalg.solve(Mmat, rhs)


def continuous_linearization(params: CartPoleParams, h: float = 1e-6):
    """Central finite-difference Jacobians at the upright equilibrium.

    Returns (A, B, B_tau) with inputs ordered (f, lambda1, lambda2).
    """
    def fdot(x, u, tau):
        acc = accelerations(params, x, u[0], u[1], u[2], tau)
        return np.array([x[2], x[3], acc[0], acc[1]])

    x0, u0 = np.zeros(4), np.zeros(3)
    A = np.zeros((4, 4))
    B = np.zeros((4, 3))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        A[:, j] = (fdot(x0 + e, u0, 0.0) - fdot(x0 - e, u0, 0.0)) / (2 * h)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        B[:, j] = (fdot(x0, u0 + e, 0.0) - fdot(x0, u0 - e, 0.0)) / (2 * h)
    Bt = (fdot(x0, u0, h) - fdot(x0, u0, -h)) / (2 * h)
    return A, B, Bt


def zoh(A, B, dt):
    n, m = B.shape
    Maug = np.zeros((n + m, n + m))
    Maug[:n, :n] = A
    Maug[:n, n:] = B
    Ed = scipy.linalg.expm(Maug * dt)
    return Ed[:n, :n], Ed[:n, n:]


def discrete_model(params: CartPoleParams):
    """(E, F, F_tau): zero-order-hold discretization of the linearization."""
    A, B, Bt = continuous_linearization(params)
    E, FF = zoh(A, np.hstack([B, Bt[:, None]]), params.dt)
    return E, FF[:, :3], FF[:, 3]


def gap_bigM(params: CartPoleParams) -> float:
    """Upper bound on the tip-to-wall gap over the bounded workspace, with a safety factor."""
    reach = params.l * np.sin(min(params.angle_max, np.pi / 2)) + params.x_max
    lam_term = params.lam_max / min(params.k)
    M = reach + lam_term + params.d_max
    if not np.isfinite(M):
        raise ValueError("workspace bounds must be finite to derive the big-M constant")
    return params.bigM_margin * M


def build_cartpole(params: CartPoleParams | None = None, N: int = 10) -> MldProblem:
    p = params or CartPoleParams()
    E, F, _ = discrete_model(p)
    nx, nd = 4, 2
    Mg = gap_bigM(p)
    H1, H2, H3 = [], [], []

    def row(h1=(0, 0, 0, 0), h2=(0, 0, 0), h3=(0, 0)):
        H1.append(np.asarray(h1, float))
        H2.append(np.asarray(h2, float))
        H3.append(np.asarray(h3, float))

    for i in range(2):
        a, k = A_SIGN[i], p.k[i]
        lam = np.zeros(3)
        lam[1 + i] = 1.0
        sel = np.zeros(2)
        sel[i] = 1.0
        # geometric gap without the contact term: a (l x2 - x1)
        gx = np.array([-a, a * p.l, 0.0, 0.0])
        row(h2=-lam)  # lambda >= 0
        row(h2=lam, h3=-p.lam_max * sel)  # no contact -> lambda = 0
        row(h2=lam)  # lambda <= lam_max
        row(h1=-gx, h2=-lam / k)  # gap >= 0           (rhs d_i)
        row(h1=gx, h2=lam / k, h3=Mg * sel)  # contact -> gap <= 0 (rhs Mg - d_i)
    row(h2=(1, 0, 0))
    row(h2=(-1, 0, 0))
    # box limits on the successor state, so the measured state itself is never constrained
    for j in range(4):
        row(h1=E[j], h2=F[j])
        row(h1=-E[j], h2=-F[j])
    Q = np.diag(p.Q)
    R = np.diag(p.R)
    QN = solve_dare(E, F, Q, R)
    prob = MldProblem(E=E, F=F, G=np.zeros((nx, nd)), H1=np.array(H1), H2=np.array(H2),
                      H3=np.array(H3), Q=Q, R=R, QN=QN, xg=np.zeros(nx), N=N)
    prob.meta = {"kind": "cartpole", "bigM_gap": Mg}
    return prob


def stage_rhs(params: CartPoleParams, d1: float, d2: float) -> np.ndarray:
    """Per-step inequality right-hand side for wall distances d1 (right) and d2 (left)."""
    Mg = gap_bigM(params)
    rhs = []
    for d in (d1, d2):
        rhs += [0.0, 0.0, params.lam_max, d, Mg - d]
    rhs += [params.f_max, params.f_max]
    ub = [params.x_max, params.angle_max, params.v_max, params.omega_max]
    for b in ub:
        rhs += [b, b]
    return np.array(rhs)


def cartpole_theta(params: CartPoleParams, problem: MldProblem, state, d1, d2) -> ParameterVector:
    """Parameters with the current wall distances held over the whole horizon."""
    return ParameterVector.constant(problem, state, stage_rhs(params, d1, d2))


def cartpole_modes() -> StepModeList:
    """No contact, right-wall contact, left-wall contact."""
    return StepModeList([(0, 0), (1, 0), (0, 1)])


def contact_forces(params: CartPoleParams, state, d1, d2) -> np.ndarray:
    """Penalty contact forces from wall penetration."""
    x1, th = state[0], state[1]
    lam = np.zeros(2)
    for i, d in enumerate((d1, d2)):
        gap = A_SIGN[i] * (params.l * th - x1) + d
        lam[i] = max(0.0, -params.k[i] * gap)
    return lam


def contact_gaps(params: CartPoleParams, state, lam, d1, d2) -> np.ndarray:
    x1, th = state[0], state[1]
    return np.array([A_SIGN[i] * (params.l * th - x1) + lam[i] / params.k[i] + d
                     for i, d in enumerate((d1, d2))])


@dataclass
class WallMotion:
    """Walls oscillating with a shared sinusoid plus independent Brownian drift."""

    d0: tuple = (0.1, 0.1)
    amplitude: float = 0.03
    frequency: float = 1.0
    brownian_std: float = 0.005
    d_min: float = 0.02
    d_max: float = 0.5
    m: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def distances(self, t: float) -> tuple[float, float]:
        base = self.amplitude * np.sin(2 * np.pi * self.frequency * t)
        d = np.clip(np.asarray(self.d0) + base + self.m, self.d_min, self.d_max)
        return float(d[0]), float(d[1])

    def advance(self, rng: np.random.Generator) -> None:
        self.m = self.m + rng.normal(0.0, self.brownian_std, size=2)


def wall_motion(t: float, rng: np.random.Generator | None = None, walls: WallMotion | None = None):
    """Wall distances at time t; advances the Brownian state when an rng is given."""
    walls = walls or WallMotion()
    d = walls.distances(t)
    if rng is not None:
        walls.advance(rng)
    return d


class CartPoleEnv:
    """Plant using the controller's discrete dynamics with physically resolved contacts."""

    def __init__(self, params: CartPoleParams | None = None, N: int = 10, walls: WallMotion | None = None):
        self.params = params or CartPoleParams()
        self.N = N
        self.problem = build_cartpole(self.params, N)
        self.E, self.F, self.F_tau = discrete_model(self.params)
        self.walls_template = walls or WallMotion(d_min=self.params.d_min, d_max=self.params.d_max)
        self.modes = cartpole_modes()
        self.nx, self.nu, self.ndelta = 4, 3, 2

    def reset(self, rng: np.random.Generator):
        self.walls = WallMotion(self.walls_template.d0, self.walls_template.amplitude,
                                self.walls_template.frequency, self.walls_template.brownian_std,
                                self.walls_template.d_min, self.walls_template.d_max)
        self.t = 0.0
        self.state = np.array([0.0, np.deg2rad(self.params.x2_init_deg), 0.0, 0.0])
        return self.state.copy()

    def env_params(self) -> dict:
        d1, d2 = self.walls.distances(self.t)
        return {"d1": d1, "d2": d2}

    def theta(self):
        d1, d2 = self.walls.distances(self.t)
        return cartpole_theta(self.params, self.problem, self.state, d1, d2)

    def step(self, u, rng: np.random.Generator):
        d1, d2 = self.walls.distances(self.t)
        lam = contact_forces(self.params, self.state, d1, d2)
        tau = rng.normal(0.0, self.params.disturbance_std) if self.params.disturbance_std > 0 else 0.0
        applied = np.array([u[0], lam[0], lam[1]])
        self.state = self.E @ self.state + self.F @ applied + self.F_tau * tau
        self.walls.advance(rng)
        self.t += self.params.dt
        return self.state.copy(), applied, {"tau": tau, "lam": lam}

    def violates(self, state) -> bool:
        return False

    def diverged(self, state) -> bool:
        """Pole past horizontal or non-finite state; the linear model no longer applies."""
        return not np.all(np.isfinite(state)) or abs(state[1]) > self.params.angle_max

    def finished(self, state) -> bool:
        return False

    def contact_planned(self, delta_star) -> bool:
        return delta_star is not None and bool(np.any(delta_star))
