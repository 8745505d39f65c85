"""Planar free-flying point mass navigating around axis-aligned square obstacles.

State (x, y, vx, vy), input (fx, fy).  Each obstacle contributes two binaries
(a, b) selecting one exterior half-plane: 00 left, 01 right, 10 below,
11 above.  Obstacle faces enter only through theta_bar.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..master import StepModeList
from ..mld import MldProblem, ParameterVector, solve_dare


class ObstacleError(ValueError):
    pass


@dataclass
class FreeFlyerParams:
    mass: float = 1.0
    u_max: float = 30.0
    v_max: float = 5.0
    dt: float = 0.02
    width_mean: float = 0.7
    width_std: float = 0.05
    jitter_std: float = 0.15
    grid_spacing: float = 1.6
    disturbance_std: float = 10.0
    Q: tuple = (100.0, 100.0, 1.0, 1.0)
    R: tuple = (1.0, 1.0)
    inflate: float = 0.05  # safety margin added around obstacles on the controller side
    min_clearance: float = 0.3  # required free gap between obstacles after jitter
    bigM_margin: float = 2.0
    max_retries: int = 100
    target_clearance: float = 0.8  # target height above the highest obstacle top
    reach_tol: float = 0.1
    reach_speed: float = 0.5  # the episode ends once within reach_tol and slower than this

    def __post_init__(self):
        vals = [self.mass, self.u_max, self.v_max, self.dt, self.width_mean]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("free-flyer parameters must be positive and finite")


@dataclass
class Obstacle:
    cx: float
    cy: float
    width: float

    @property
    def bounds(self):
        h = 0.5 * self.width
        return self.cx - h, self.cx + h, self.cy - h, self.cy + h

    def inflated(self, margin: float) -> "Obstacle":
        return Obstacle(self.cx, self.cy, self.width + 2.0 * margin)

    def contains(self, px: float, py: float) -> bool:
        """Strict interior test."""
        x0, x1, y0, y1 = self.bounds
        return x0 < px < x1 and y0 < py < y1


def _overlap(a: Obstacle, b: Obstacle, clearance: float) -> bool:
    ax0, ax1, ay0, ay1 = a.bounds
    bx0, bx1, by0, by1 = b.bounds
    return not (ax1 + clearance <= bx0 or bx1 + clearance <= ax0
                or ay1 + clearance <= by0 or by1 + clearance <= ay0)


def generate_obstacles(params: FreeFlyerParams, M_o: int, rng: np.random.Generator) -> list[Obstacle]:
    """Grid placement followed by random jitter, regenerated until no two obstacles overlap."""
    if M_o < 1:
        raise ObstacleError("need at least one obstacle")
    cols = int(np.ceil(np.sqrt(M_o)))
    sp = params.grid_spacing
    base = []
    for i in range(M_o):
        r, c = divmod(i, cols)
        # staggered rows so consecutive rows do not line up
        shift = 0.5 * sp if r % 2 else 0.0
        base.append(((c - 0.5 * (cols - 1)) * sp + shift - 0.25 * sp, (r + 1) * sp))
    for _ in range(params.max_retries):
        obs = []
        for bx, by in base:
            j = rng.normal(0.0, params.jitter_std, size=2)
            w = max(rng.normal(params.width_mean, params.width_std), 0.1)
            obs.append(Obstacle(bx + j[0], by + j[1], w))
        clash = any(_overlap(obs[i], obs[j], params.min_clearance)
                    for i in range(M_o) for j in range(i + 1, M_o))
        if not clash:
            return obs
    raise ObstacleError(f"could not place {M_o} non-overlapping obstacles in {params.max_retries} tries")


def generate_target(params: FreeFlyerParams, obstacles: list[Obstacle], rng: np.random.Generator) -> np.ndarray:
    """Uniform x over the obstacle span widened by one metre per side; y beyond every obstacle."""
    xs = [o.cx for o in obstacles]
    lo, hi = min(xs) - 1.0, max(xs) + 1.0
    top = max(o.bounds[3] for o in obstacles)
    return np.array([rng.uniform(lo, hi), top + params.target_clearance])


def workspace_bigM(params: FreeFlyerParams, obstacles, start, target, N: int) -> float:
    """Big-M from the extent of everything the robot can reach over one plan."""
    pts = [np.asarray(start, float)[:2], np.asarray(target, float)[:2]]
    for o in obstacles:
        x0, x1, y0, y1 = o.inflated(params.inflate).bounds
        pts += [np.array([x0, y0]), np.array([x1, y1])]
    P = np.vstack(pts)
    reach = params.v_max * N * params.dt + 1.0
    span = float(np.max(P.max(axis=0) - P.min(axis=0))) + 2.0 * reach
    if not np.isfinite(span):
        raise ObstacleError("workspace must be bounded to derive the big-M constant")
    return params.bigM_margin * span


def double_integrator(params: FreeFlyerParams):
    dt, m = params.dt, params.mass
    E = np.eye(4)
    E[0, 2] = E[1, 3] = dt
    F = np.zeros((4, 2))
    F[0, 0] = F[1, 1] = 0.5 * dt * dt / m
    F[2, 0] = F[3, 1] = dt / m
    return E, F


def build_freeflyer(params: FreeFlyerParams, obstacles, target, N: int, bigM: float) -> MldProblem:
    p = params
    E, F = double_integrator(p)
    M_o = len(obstacles)
    H1, H2, H3 = [], [], []

    def row(h1, h2, h3):
        H1.append(np.asarray(h1, float))
        H2.append(np.asarray(h2, float))
        H3.append(np.asarray(h3, float))

    ex, ey = E[0], E[1]
    fx, fy = F[0], F[1]
    for i in range(M_o):
        def sel(ca, cb):
            v = np.zeros(2 * M_o)
            v[2 * i], v[2 * i + 1] = ca, cb
            return v
        # rows act on the successor position x[k+1] = E x[k] + F u[k]
        row(ex, fx, sel(-bigM, -bigM))   # 00: x <= xmin
        row(-ex, -fx, sel(-bigM, bigM))  # 01: x >= xmax
        row(ey, fy, sel(bigM, -bigM))    # 10: y <= ymin
        row(-ey, -fy, sel(bigM, bigM))   # 11: y >= ymax
    for j in (2, 3):
        row(E[j], F[j], np.zeros(2 * M_o))
        row(-E[j], -F[j], np.zeros(2 * M_o))
    for j in (0, 1):
        u = np.zeros(2)
        u[j] = 1.0
        row(np.zeros(4), u, np.zeros(2 * M_o))
        row(np.zeros(4), -u, np.zeros(2 * M_o))
    Q = np.diag(p.Q)
    R = np.diag(p.R)
    QN = solve_dare(E, F, Q, R)
    xg = np.array([target[0], target[1], 0.0, 0.0])
    prob = MldProblem(E=E, F=F, G=np.zeros((4, 2 * M_o)), H1=np.array(H1), H2=np.array(H2),
                      H3=np.array(H3), Q=Q, R=R, QN=QN, xg=xg, N=N)
    prob.meta = {"kind": "freeflyer", "bigM": bigM, "M_o": M_o}
    return prob


def stage_rhs(params: FreeFlyerParams, obstacles, bigM: float) -> np.ndarray:
    rhs = []
    for o in obstacles:
        x0, x1, y0, y1 = o.inflated(params.inflate).bounds
        rhs += [x0, bigM - x1, y0 + bigM, 2.0 * bigM - y1]
    rhs += [params.v_max] * 4 + [params.u_max] * 4
    return np.array(rhs)


def region_codes(obstacle: Obstacle, px: float, py: float) -> list[tuple[int, int]]:
    """Codes whose half-plane contains the point (closed half-planes)."""
    x0, x1, y0, y1 = obstacle.bounds
    out = []
    if px <= x0:
        out.append((0, 0))
    if px >= x1:
        out.append((0, 1))
    if py <= y0:
        out.append((1, 0))
    if py >= y1:
        out.append((1, 1))
    return out


def freeflyer_modes(obstacles, grid_res: float, bounds=None, inflate: float = 0.0) -> StepModeList:
    """Per-step code combinations realized by at least one grid point outside all obstacles."""
    if not grid_res > 0:
        raise ObstacleError("grid resolution must be positive")
    obs = [o.inflated(inflate) for o in obstacles]
    if bounds is None:
        xs = [b for o in obs for b in o.bounds[:2]]
        ys = [b for o in obs for b in o.bounds[2:]]
        pad = 1.0
        bounds = (min(xs) - pad, max(xs) + pad, min(ys) - pad, max(ys) + pad)
    gx = np.arange(bounds[0], bounds[1] + 0.5 * grid_res, grid_res)
    gy = np.arange(bounds[2], bounds[3] + 0.5 * grid_res, grid_res)
    found = set()
    for px in gx:
        for py in gy:
            per = [region_codes(o, px, py) for o in obs]
            if any(len(c) == 0 for c in per):
                continue  # inside some obstacle
            combos = [()]
            for codes in per:
                combos = [c + code for c in combos for code in codes]
            found.update(combos)
    if not found:
        raise ObstacleError("no admissible point on the grid; the workspace is fully blocked")
    return StepModeList(sorted(found))


class FreeFlyerEnv:
    """Plant with the controller's discrete dynamics and an additive random force."""

    def __init__(self, params: FreeFlyerParams | None = None, M_o: int = 3, N: int = 9,
                 seed: int = 0, grid_res: float = 0.1):
        self.params = params or FreeFlyerParams()
        self.M_o = M_o
        self.N = N
        # layout stream; the plant noise stream is drawn from [seed, 1] by the simulator
        rng = np.random.default_rng([seed, 0])
        self.seed = seed
        self.obstacles = generate_obstacles(self.params, M_o, rng)
        self.target = generate_target(self.params, self.obstacles, rng)
        self.start = np.zeros(4)
        self.bigM = workspace_bigM(self.params, self.obstacles, self.start, self.target, N)
        self.problem = build_freeflyer(self.params, self.obstacles, self.target, N, self.bigM)
        self.E, self.F = double_integrator(self.params)
        self.modes = freeflyer_modes(self.obstacles, grid_res, inflate=self.params.inflate)
        self.nx, self.nu, self.ndelta = 4, 2, 2 * M_o
        self._rhs = stage_rhs(self.params, self.obstacles, self.bigM)

    def reset(self, rng: np.random.Generator):
        self.t = 0.0
        self.state = self.start.copy()
        return self.state.copy()

    def env_params(self) -> dict:
        return {"target_x": float(self.target[0]), "target_y": float(self.target[1])}

    def layout(self) -> dict:
        return {"obstacles": [[o.cx, o.cy, o.width] for o in self.obstacles],
                "target": [float(v) for v in self.target], "start": [float(v) for v in self.start]}

    def theta(self):
        return ParameterVector.constant(self.problem, self.state, self._rhs)

    def step(self, u, rng: np.random.Generator):
        mu = rng.normal(0.0, self.params.disturbance_std, size=2) if self.params.disturbance_std > 0 else np.zeros(2)
        applied = np.asarray(u, float)
        self.state = self.E @ self.state + self.F @ (applied + mu)
        self.t += self.params.dt
        return self.state.copy(), applied, {"mu": mu}

    def violates(self, state) -> bool:
        """True when no region code of some (uninflated) obstacle admits the position."""
        return any(not region_codes(o, state[0], state[1]) for o in self.obstacles)

    def distance_to_target(self, state=None) -> float:
        s = self.state if state is None else state
        return float(np.linalg.norm(s[:2] - self.target))

    def diverged(self, state) -> bool:
        return not np.all(np.isfinite(state))

    def finished(self, state) -> bool:
        return (self.distance_to_target(state) < self.params.reach_tol
                and float(np.linalg.norm(state[2:])) < self.params.reach_speed)

    def contact_planned(self, delta_star) -> bool:
        return delta_star is not None
