"""Dense convex QP solver with exact duals and a phase-1 simplex that emits Farkas certificates.

Both entry points first eliminate the equality constraints through an SVD of
A, z = z_p + Z w, and then work in the reduced variable w.  Duals of the
equality rows are recovered afterwards from full-space stationarity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .mld import StackedQP

FEAS_TOL = 1e-7
CERT_LAMBDA_TOL = 1e-9
CERT_STAT_TOL = 1e-7
CERT_GAP_TOL = 1e-8
PHASE1_ZERO = 1e-9
DEPENDENT_TOL = 1e-12


class SolverError(RuntimeError):
    """Numerical failure: iteration cap, cycling, or an unverifiable branch."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class FarkasCertificate:
    nu_tilde: np.ndarray
    lambda_tilde: np.ndarray

    def normalized(self) -> "FarkasCertificate":
        s = max(_maxabs(self.nu_tilde), _maxabs(self.lambda_tilde))
        if s == 0.0:
            return FarkasCertificate(self.nu_tilde.copy(), self.lambda_tilde.copy())
        return FarkasCertificate(self.nu_tilde / s, self.lambda_tilde / s)

    def scaled(self, a: float) -> "FarkasCertificate":
        return FarkasCertificate(a * self.nu_tilde, a * self.lambda_tilde)

    @property
    def ray(self) -> np.ndarray:
        return np.concatenate([self.nu_tilde, self.lambda_tilde])


@dataclass
class Feasible:
    z0: np.ndarray


@dataclass
class QpSolution:
    z_star: np.ndarray
    v: float
    nu_star: np.ndarray
    lambda_star: np.ndarray
    active_set: np.ndarray
    working_set: tuple = ()
    iterations: int = 0


def _maxabs(a) -> float:
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


def data_scale(A, b, C, d) -> float:
    return 1.0 + max(_maxabs(A), _maxabs(C), _maxabs(b), _maxabs(d))


# -- equality elimination ------------------------------------------------------


class EqualityReduction:
    """Null-space parametrization of {z : A z = b} computed once per matrix A."""

    def __init__(self, A: np.ndarray, nz: int):
        A = np.asarray(A, dtype=float).reshape(-1, nz)
        self.A = A
        self.nz = nz
        if A.shape[0] == 0:
            self.U = np.zeros((0, 0))
            self.s = np.zeros(0)
            self.Vr = np.zeros((0, nz))
            self.Z = np.eye(nz)
            return
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
        tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        r = int(np.sum(s > tol))
        self.U = U[:, :r]
        self.s = s[:r]
        self.Vr = Vt[:r]
        self.Z = Vt[r:].T

    def particular(self, b: np.ndarray) -> np.ndarray:
        if self.A.shape[0] == 0:
            return np.zeros(self.nz)
        return self.Vr.T @ ((self.U.T @ b) / self.s)

    def eq_multipliers(self, r: np.ndarray) -> np.ndarray:
        """Least-squares solution of A' nu = r."""
        if self.A.shape[0] == 0:
            return np.zeros(0)
        return self.U @ ((self.Vr @ r) / self.s)


# -- phase 1 -------------------------------------------------------------------


def _phase1_reduced(Cr, dr, trace, max_pivots=None, refactor_every=64, bland_after=30):
    """Minimize total infeasibility of Cr w <= dr by a dense tableau simplex.

    Returns (objective, w, y) where y are the row duals of the phase-1 LP.
    """
    m, n = Cr.shape
    sign = np.where(dr < 0, -1.0, 1.0)
    neg = np.flatnonzero(dr < 0)
    na = neg.size
    # columns: w+ (n), w- (n), slack (m), artificial (na), rows flipped so rhs >= 0
    M = np.zeros((m, 2 * n + m + na))
    M[:, :n] = Cr
    M[:, n:2 * n] = -Cr
    M[:, 2 * n:2 * n + m] = np.eye(m)
    M[neg, 2 * n + m + np.arange(na)] = -1.0
    M *= sign[:, None]
    rhs0 = dr * sign
    cost = np.zeros(M.shape[1])
    cost[2 * n + m:] = 1.0
    basis = np.arange(2 * n, 2 * n + m)
    basis[neg] = 2 * n + m + np.arange(na)
    if max_pivots is None:
        max_pivots = 50 * (m + 2 * n) + 1000

    T = M.copy()
    rhs = rhs0.copy()
    piv_tol = 1e-9
    degenerate = 0
    pivots = 0
    since_refactor = 0
    while True:
        if since_refactor >= refactor_every:
            B = M[:, basis]
            T = np.linalg.solve(B, M)
            rhs = np.linalg.solve(B, rhs0)
            rhs = np.where(np.abs(rhs) < 1e-13, 0.0, rhs)
            since_refactor = 0
        red = cost - cost[basis] @ T
        red[basis] = 0.0
        rtol = 1e-11 * (1.0 + np.abs(cost[basis] @ np.abs(T)).max(initial=0.0))
        cand = np.flatnonzero(red < -rtol)
        if cand.size == 0:
            break
        if pivots >= max_pivots:
            raise SolverError(f"phase-1 simplex hit its pivot cap ({max_pivots})", trace)
        use_bland = degenerate >= bland_after
        j = int(cand[0]) if use_bland else int(cand[np.argmin(red[cand])])
        col = T[:, j]
        rows = np.flatnonzero(col > piv_tol * max(1.0, _maxabs(col)))
        if rows.size == 0:
            raise SolverError("phase-1 LP reported unbounded; this cannot happen for a bounded objective", trace)
        ratios = rhs[rows] / col[rows]
        rmin = ratios.min()
        ties = rows[ratios <= rmin + 1e-12 * (1.0 + abs(rmin))]
        if use_bland:
            i = int(ties[np.argmin(basis[ties])])
        else:
            i = int(ties[np.argmax(col[ties])])  # largest pivot among ties
        if rmin <= 1e-12:
            degenerate += 1
        else:
            degenerate = 0
        p = T[i, j]
        T[i] /= p
        rhs[i] /= p
        others = np.flatnonzero(np.arange(m) != i)
        f = T[others, j].copy()
        T[others] -= np.outer(f, T[i])
        rhs[others] -= f * rhs[i]
        rhs = np.maximum(rhs, 0.0)
        basis[i] = j
        pivots += 1
        since_refactor += 1
    trace.append(("phase1_pivots", pivots))
    # exact primal and dual from the final basis
    B = M[:, basis]
    xb = np.linalg.solve(B, rhs0)
    x = np.zeros(M.shape[1])
    x[basis] = xb
    yf = np.linalg.solve(B.T, cost[basis])
    y = yf * sign
    w = x[:n] - x[n:2 * n]
    obj = float(cost @ x)
    return obj, w, y


def _empty_arrays(A, b, C, d, nz=None):
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    if nz is None:
        nz = A.shape[1] if A.ndim == 2 and A.size else (C.shape[1] if C.ndim == 2 else 0)
    return A.reshape(b.size, nz), b, C.reshape(d.size, nz), d, nz


def phase1(A, b, C, d, reduction: EqualityReduction | None = None, trace=None):
    """Find z with A z = b, C z <= d, or a Farkas certificate that none exists.

    Returns a ``Feasible`` or a normalized ``FarkasCertificate``.
    """
    A, b, C, d, nz = _empty_arrays(A, b, C, d, None if reduction is None else reduction.nz)
    trace = [] if trace is None else trace
    scale = data_scale(A, b, C, d)
    if reduction is None:
        reduction = EqualityReduction(A, nz)
    zp = reduction.particular(b)
    eq_res = b - A @ zp
    if _maxabs(eq_res) > FEAS_TOL * scale:
        # inconsistent equalities: the residual direction is a certificate
        cert = FarkasCertificate(-eq_res, np.zeros(d.size)).normalized()
        if verify_farkas(cert, A, b, C, d):
            return cert
        raise SolverError("equality system inconsistent but no verifiable certificate", trace)
    Z = reduction.Z
    Cr = C @ Z
    dr = d - C @ zp
    if dr.size == 0 or np.all(dr >= 0):
        return Feasible(zp)
    # second attempt: Bland pricing with a fresh factorization every pivot
    for bland_after, refactor_every in ((30, 64), (0, 1)):
        obj, w, y = _phase1_reduced(Cr, dr, trace, refactor_every=refactor_every, bland_after=bland_after)
        z0 = zp + Z @ w
        viol = _maxabs(np.maximum(C @ z0 - d, 0.0)) if d.size else 0.0
        if obj <= PHASE1_ZERO * scale and viol <= FEAS_TOL * scale:
            return Feasible(z0)
        lam = np.maximum(-y, 0.0)
        lam[lam < 1e-10 * max(_maxabs(lam), 1e-300)] = 0.0
        nu = -reduction.eq_multipliers(C.T @ lam)
        cert = FarkasCertificate(nu, lam).normalized()
        if verify_farkas(cert, A, b, C, d):
            return cert
        if viol <= FEAS_TOL * scale:
            return Feasible(z0)
        trace.append(("phase1_retry", obj, viol))
    raise SolverError(
        f"phase-1 ended in an ambiguous state (objective {obj:.3e}, violation {viol:.3e})", trace
    )


def verify_farkas(cert: FarkasCertificate, A, b, C, d) -> bool:
    """Check lambda >= 0, A'nu + C'lambda = 0 and b'nu + d'lambda < 0 after normalization."""
    nu = np.asarray(cert.nu_tilde, dtype=float).ravel()
    lam = np.asarray(cert.lambda_tilde, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    if nu.shape != b.shape or lam.shape != d.shape:
        return False
    s = max(_maxabs(nu), _maxabs(lam))
    if not np.isfinite(s) or s == 0.0:
        return False
    nu, lam = nu / s, lam / s
    nz = None
    A, b, C, d, nz = _empty_arrays(A, b, C, d, nz)
    scale = data_scale(A, b, C, d)
    if lam.size and lam.min() < -CERT_LAMBDA_TOL:
        return False
    if _maxabs(A.T @ nu + C.T @ lam) > CERT_STAT_TOL * scale:
        return False
    return float(b @ nu + d @ lam) <= -CERT_GAP_TOL


# -- QP ------------------------------------------------------------------------


def dual_value(nu, lam, qp: StackedQP) -> float:
    """Lagrange dual function of the stacked QP."""
    w = qp.A.T @ nu + qp.C.T @ lam
    Qinv = qp.Qinv if qp.Qinv is not None else np.linalg.inv(qp.Qbar)
    return float(-0.25 * w @ Qinv @ w + qp.z_g @ w - qp.b @ nu - qp.d @ lam)


def _reduction_for(qp: StackedQP) -> EqualityReduction:
    red = getattr(qp, "_reduction", None)
    if red is None:
        red = EqualityReduction(qp.A, qp.Qbar.shape[0])
        qp._reduction = red
    return red


class _Hessian:
    def __init__(self, H):
        self.H = H
        self.cho = scipy.linalg.cho_factor(H)

    def solve(self, x):
        return scipy.linalg.cho_solve(self.cho, x)


def _eqp(Hc, g, Cw, rw):
    """Minimize 0.5 w'Hw + g'w subject to Cw w = rw; returns (w, multipliers)."""
    if Cw.shape[0] == 0:
        return -Hc.solve(g), np.zeros(0)
    H = Hc.H
    n, k = H.shape[0], Cw.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Cw.T
    K[n:, :n] = Cw
    rhs = np.concatenate([-g, rw])
    lu = scipy.linalg.lu_factor(K)
    sol = scipy.linalg.lu_solve(lu, rhs)
    # one step of iterative refinement
    sol = sol + scipy.linalg.lu_solve(lu, rhs - K @ sol)
    return sol[:n], sol[n:]


def _dependent_on(Hc, Cw, a) -> bool:
    Ha = Hc.solve(a)
    base = float(a @ Ha)
    if Cw.shape[0] == 0:
        return base <= 0.0
    HC = Hc.solve(Cw.T)
    S = Cw @ HC
    t = HC.T @ a
    resid = base - float(t @ np.linalg.solve(S, t))
    return resid <= DEPENDENT_TOL * base


def _independent(Hc, Cw) -> bool:
    if Cw.shape[0] == 0:
        return True
    if Cw.shape[0] > Cw.shape[1]:
        return False
    S = Cw @ Hc.solve(Cw.T)
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    return ev.min() > 1e-10 * max(ev.max(), 1e-300)


def solve_qp(qp: StackedQP, working_set_hint=None, max_iter: int | None = None, trace=None):
    """Primal active-set solve; returns a ``QpSolution`` or a ``FarkasCertificate``."""
    trace = [] if trace is None else trace
    A, b, C, d = qp.A, qp.b, qp.C, qp.d
    scale = qp.scale
    red = _reduction_for(qp)
    zp = red.particular(b)
    Z = red.Z
    Cr = C @ Z
    dr = d - C @ zp
    m, n = Cr.shape
    H = 2.0 * Z.T @ qp.Qbar @ Z
    H = 0.5 * (H + H.T)
    g0 = 2.0 * Z.T @ qp.Qbar @ (zp - qp.z_g)
    Hc = _Hessian(H) if n else None
    ftol = FEAS_TOL * scale

    w = None
    W: list[int] = []
    if _maxabs(b - A @ zp) <= ftol and working_set_hint is not None and n:
        hint = sorted({int(i) for i in working_set_hint if 0 <= int(i) < m})
        if _independent(Hc, Cr[hint]):
            w_try, _ = _eqp(Hc, g0, Cr[hint], dr[hint])
            if m == 0 or np.all(Cr @ w_try <= dr + 0.1 * ftol):
                w, W = w_try, hint
                trace.append(("hint_accepted", len(hint)))
    if w is None:
        res = phase1(A, b, C, d, reduction=red, trace=trace)
        if isinstance(res, FarkasCertificate):
            return res
        w = Z.T @ (res.z0 - zp)
        W = []
    if n == 0:
        lam = np.zeros(m)
        return _finish(qp, red, zp + Z @ w, lam, W, 0)

    if max_iter is None:
        max_iter = 20 * (m + n) + 100
    row_norms = np.linalg.norm(Cr, axis=1)
    for it in range(max_iter):
        grad = H @ w + g0
        Cw = Cr[W]
        p, mu = _eqp(Hc, grad, Cw, np.zeros(len(W)))
        if len(W) >= n:
            p = np.zeros(n)  # a vertex: any nonzero step is rounding
        if _maxabs(p) <= 1e-10 * (1.0 + _maxabs(w)):
            if len(W) == 0:
                return _finish(qp, red, zp + Z @ w, np.zeros(m), W, it + 1)
            thresh = -1e-10 * (1.0 + _maxabs(mu))
            jmin = int(np.argmin(mu))
            if mu[jmin] >= thresh:
                lam = np.zeros(m)
                lam[W] = np.maximum(mu, 0.0)
                return _finish(qp, red, zp + Z @ w, lam, W, it + 1)
            trace.append(("drop", W[jmin]))
            W = W[:jmin] + W[jmin + 1:]
            continue
        Cp = Cr @ p
        slack = dr - Cr @ w
        # rows nearly orthogonal to the step cannot block; admitting them risks a dependent working set
        mask = Cp > 1e-9 * row_norms * np.linalg.norm(p)
        mask[W] = False
        alpha, block = 1.0, -1
        idx = np.flatnonzero(mask)
        ratios = np.maximum(slack[idx], 0.0) / Cp[idx]
        while idx.size:
            k = int(np.argmin(ratios))
            if ratios[k] >= 1.0:
                break
            if _dependent_on(Hc, Cw, Cr[idx[k]]):
                # a row in the span of the working set is only blocking through rounding
                idx, ratios = np.delete(idx, k), np.delete(ratios, k)
                continue
            alpha, block = float(ratios[k]), int(idx[k])
            break
        w = w + alpha * p
        if block >= 0:
            W = W + [block]
            trace.append(("add", block))
    raise SolverError(f"active-set QP hit its iteration cap ({max_iter})", trace)


def _finish(qp: StackedQP, red: EqualityReduction, z, lam, W, iters) -> QpSolution:
    r = -(2.0 * qp.Qbar @ (z - qp.z_g) + qp.C.T @ lam)
    nu = red.eq_multipliers(r)
    slack = qp.d - qp.C @ z
    active = np.flatnonzero(np.abs(slack) <= FEAS_TOL * qp.scale)
    return QpSolution(z, qp.cost(z), nu, lam, active, tuple(int(i) for i in W), iters)


@dataclass
class KktReport:
    stationarity: float
    complementarity: float
    primal_eq: float
    primal_ineq: float
    dual_sign: float
    duality: float
    ok: bool = field(default=False)


def kkt_report(sol: QpSolution, qp: StackedQP) -> KktReport:
    """Residuals of every optimality condition, with the pass verdict at library tolerances."""
    s = qp.scale
    stat = _maxabs(2.0 * qp.Qbar @ (sol.z_star - qp.z_g) + qp.A.T @ sol.nu_star + qp.C.T @ sol.lambda_star)
    slack = qp.C @ sol.z_star - qp.d
    comp = _maxabs(sol.lambda_star * slack)
    peq = _maxabs(qp.A @ sol.z_star - qp.b)
    pin = max(0.0, float(slack.max())) if slack.size else 0.0
    dsign = max(0.0, -float(sol.lambda_star.min())) if sol.lambda_star.size else 0.0
    dual = abs(dual_value(sol.nu_star, sol.lambda_star, qp) - sol.v)
    ok = (
        stat <= 1e-6 * s
        and comp <= 1e-6 * s
        and peq <= FEAS_TOL * s
        and pin <= FEAS_TOL * s
        and dsign <= 1e-9
        and dual <= 1e-6 * (1.0 + abs(sol.v))
    )
    return KktReport(stat, comp, peq, pin, dsign, dual, ok)
