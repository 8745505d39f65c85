"""Master problem over binary trajectories: step-by-step greedy search and exact enumeration.

Both solvers work on cuts already evaluated at the current parameters
(``InstantiatedCuts``) and on a finite list of admissible per-step modes.
They return a ``MasterSolution`` or ``None`` when no trajectory satisfies the
feasibility cuts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cuts import InstantiatedCuts

ADMIT_TOL = 1e-9
TIE_TOL = 1e-9  # relative tolerance for treating surrogate costs as tied
ENUM_CAP = 2 ** 20


class MasterError(RuntimeError):
    pass


class BacktrackBudgetExceeded(MasterError):
    pass


class StepModeList:
    """Distinct candidate values of delta[k], shared by every step."""

    def __init__(self, modes):
        arr = np.atleast_2d(np.asarray(modes, dtype=float))
        if arr.shape[0] == 0:
            raise MasterError("mode list is empty")
        if not np.all((arr == 0) | (arr == 1)):
            raise MasterError("modes must be binary vectors")
        if len({tuple(r) for r in arr}) != arr.shape[0]:
            raise MasterError("modes must be distinct")
        self.modes = arr
        # rank of each mode in lexicographic binary order, used to break ties
        order = sorted(range(arr.shape[0]), key=lambda i: tuple(arr[i]))
        self.lex_rank = np.empty(arr.shape[0], dtype=int)
        self.lex_rank[order] = np.arange(arr.shape[0])

    @classmethod
    def all_binary(cls, ndelta: int) -> "StepModeList":
        grid = ((np.arange(2 ** ndelta)[:, None] >> np.arange(ndelta)[::-1]) & 1).astype(float)
        return cls(grid)

    def __len__(self):
        return self.modes.shape[0]

    def __iter__(self):
        return iter(self.modes)

    @property
    def ndelta(self) -> int:
        return self.modes.shape[1]


@dataclass
class MasterSolution:
    delta: np.ndarray  # (N, ndelta)
    m_star: float
    backtracks: int = 0
    exact: bool = False
    restore_error: float = 0.0
    has_objective: bool = True


@dataclass
class ParsedCuts:
    """Per-step contribution tables of every cut row for every mode."""

    N: int
    feas_bucket: np.ndarray  # (P,)
    feas_S: np.ndarray  # (P,)
    feas_contrib: np.ndarray  # (N, P, M): V_p[k] . mode_m
    opt_S: np.ndarray  # (Q,)
    opt_contrib: np.ndarray  # (N, Q, M)

    def bucket(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.feas_bucket == i)


def parse(cuts: InstantiatedCuts, modes: StepModeList) -> ParsedCuts:
    M = modes.modes
    feas = np.einsum("pkd,md->kpm", cuts.feas_V, M) if cuts.n_feas else np.zeros((cuts.N, 0, len(modes)))
    opt = np.einsum("qkd,md->kqm", cuts.opt_V, M) if cuts.n_opt else np.zeros((cuts.N, 0, len(modes)))
    return ParsedCuts(cuts.N, cuts.feas_bucket.copy(), cuts.feas_S.copy(), feas, cuts.opt_S.copy(), opt)


def lookahead_rows(parsed: ParsedCuts, k: int):
    """Rows c[p, m] >= -S_p that step k must satisfy for bucket k+1 to stay satisfiable.

    Returns (row indices, per-mode step-k coefficients, exact max over step k+1).
    """
    if k >= parsed.N - 1:
        raise MasterError("look-ahead needs a following step")
    rows = parsed.bucket(k + 1)
    coef = parsed.feas_contrib[k][rows]
    best_next = parsed.feas_contrib[k + 1][rows].max(axis=1) if rows.size else np.zeros(0)
    return rows, coef, best_next


def _step_candidates(parsed, modes, k, S_feas, S_opt, lookahead, la_cache, prefer=None):
    rows = parsed.bucket(k)
    ok = np.ones(len(modes), dtype=bool)
    if rows.size:
        ok &= np.all(parsed.feas_contrib[k][rows] >= -S_feas[rows, None] - ADMIT_TOL, axis=0)
    if lookahead and k < parsed.N - 1:
        if k not in la_cache:
            la_cache[k] = lookahead_rows(parsed, k)
        lrows, coef, best_next = la_cache[k]
        if lrows.size:
            ok &= np.all(coef + best_next[:, None] >= -S_feas[lrows, None] - ADMIT_TOL, axis=0)
    idx = np.flatnonzero(ok)
    if S_opt.size:
        cost = (S_opt[:, None] - parsed.opt_contrib[k][:, idx]).max(axis=0)
    else:
        cost = np.zeros(idx.size)
    order = np.lexsort((modes.lex_rank[idx], cost))
    idx, cost = idx[order], cost[order]
    if prefer is not None and idx.size > 1:
        # a mode tied with the best moves to the front
        tied = cost <= cost[0] + TIE_TOL * (1.0 + abs(cost[0]))
        hit = np.flatnonzero(tied & (idx == prefer))
        if hit.size and hit[0] > 0:
            j = int(hit[0])
            perm = np.r_[j, np.arange(j), np.arange(j + 1, idx.size)]
            idx, cost = idx[perm], cost[perm]
    return idx, cost


def solve_greedy(cuts: InstantiatedCuts, modes: StepModeList, lookahead: bool = False,
                 backtrack_budget: int | None = None, check_restore: bool = False,
                 enum_cap: int = ENUM_CAP, starts: int = 1, sticky: bool = False) -> MasterSolution | None:
    """Greedy per-step master solve with backtracking on dead ends.

    ``starts`` > 1 completes the greedy descent from up to that many step-0
    candidates (in the usual mode order) and keeps the lowest objective; ties
    go to the earlier candidate.  ``starts=1`` is the plain single descent.
    With ``sticky`` a step whose best surrogate cost is tied keeps the mode
    chosen at the previous step instead of the first mode in lex order.
    """
    parsed = parse(cuts, modes)
    N = parsed.N
    S_feas = parsed.feas_S.copy()
    S_opt = parsed.opt_S.copy()
    la_cache: dict = {}
    stack = []  # per level: (candidate indices, costs, position)
    chosen: list[int] = []
    cand, cost = _step_candidates(parsed, modes, 0, S_feas, S_opt, lookahead, la_cache)
    stack.append([cand, cost, 0])
    backtracks = 0
    restore_err = 0.0
    best = None  # (delta, objective)
    completed = 0
    while True:
        k = len(chosen)
        cand, cost, pos = stack[-1]
        if pos < cand.size:
            m = int(cand[pos])
            chosen.append(m)
            S_opt -= parsed.opt_contrib[k][:, m]
            later = parsed.feas_bucket > k
            S_feas[later] += parsed.feas_contrib[k][later, m]
            if k + 1 == N:
                value = float(S_opt.max()) if S_opt.size else 0.0
                if best is None or value < best[1]:
                    best = (modes.modes[chosen].copy(), value)
                completed += 1
                if completed >= starts:
                    break
                # unwind to step 0 and descend from its next candidate
                for kb in range(len(chosen) - 1, -1, -1):
                    mb = chosen.pop()
                    S_opt += parsed.opt_contrib[kb][:, mb]
                    later = parsed.feas_bucket > kb
                    S_feas[later] -= parsed.feas_contrib[kb][later, mb]
                del stack[1:]
                stack[0][2] += 1
                continue
            c2, k2 = _step_candidates(parsed, modes, k + 1, S_feas, S_opt, lookahead, la_cache,
                                      prefer=m if sticky else None)
            stack.append([c2, k2, 0])
            continue
        # dead end at step k: undo step k-1 and take its next candidate
        stack.pop()
        if not stack:
            break
        backtracks += 1
        if backtrack_budget is not None and backtracks > backtrack_budget:
            if len(modes) ** N <= enum_cap:
                sol = solve_enumeration(cuts, modes, enum_cap)
                if sol is not None:
                    sol.backtracks = backtracks
                return sol
            raise BacktrackBudgetExceeded(
                f"greedy master exceeded {backtrack_budget} backtracks and the mode grid is too large to enumerate"
            )
        kb = len(chosen) - 1
        m = chosen.pop()
        S_opt += parsed.opt_contrib[kb][:, m]
        later = parsed.feas_bucket > kb
        S_feas[later] -= parsed.feas_contrib[kb][later, m]
        if check_restore:
            rf, ro = _recompute(parsed, chosen)
            restore_err = max(restore_err, _maxabs(rf - S_feas), _maxabs(ro - S_opt))
        stack[-1][2] += 1
    if best is None:
        return None
    return MasterSolution(best[0], best[1], backtracks, False, restore_err, S_opt.size > 0)


def _maxabs(a) -> float:
    return float(np.abs(a).max()) if a.size else 0.0


def _recompute(parsed: ParsedCuts, chosen):
    S_feas = parsed.feas_S.copy()
    S_opt = parsed.opt_S.copy()
    for k, m in enumerate(chosen):
        S_opt -= parsed.opt_contrib[k][:, m]
        later = parsed.feas_bucket > k
        S_feas[later] += parsed.feas_contrib[k][later, m]
    return S_feas, S_opt


def solve_enumeration(cuts: InstantiatedCuts, modes: StepModeList, cap: int = ENUM_CAP,
                      chunk: int = 8192) -> MasterSolution | None:
    """Exact master solve by scanning every mode trajectory in lexicographic order."""
    N = cuts.N
    M = len(modes)
    total = M ** N
    if total > cap:
        raise MasterError(f"{total} mode trajectories exceed the enumeration cap {cap}; use the greedy master")
    parsed = parse(cuts, modes)
    lex = np.argsort(modes.lex_rank)  # mode indices in lexicographic order
    best_val, best_combo = np.inf, None
    place = M ** np.arange(N - 1, -1, -1)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        digits = lex[(codes[:, None] // place) % M]  # (C, N) mode indices
        if parsed.feas_S.size:
            lhs = parsed.feas_S[None, :].copy()
            for k in range(N):
                lhs = lhs + parsed.feas_contrib[k][:, digits[:, k]].T
            ok = np.all(lhs >= -ADMIT_TOL, axis=1)
        else:
            ok = np.ones(codes.size, dtype=bool)
        if not ok.any():
            continue
        dg = digits[ok]
        if parsed.opt_S.size:
            val = np.broadcast_to(parsed.opt_S[None, :], (dg.shape[0], parsed.opt_S.size)).copy()
            for k in range(N):
                val -= parsed.opt_contrib[k][:, dg[:, k]].T
            obj = val.max(axis=1)
        else:
            obj = np.zeros(dg.shape[0])
        j = int(np.argmin(obj))
        if obj[j] < best_val:
            best_val, best_combo = float(obj[j]), dg[j]
    if best_combo is None:
        return None
    return MasterSolution(modes.modes[best_combo].copy(), best_val, 0, True, 0.0, parsed.opt_S.size > 0)
