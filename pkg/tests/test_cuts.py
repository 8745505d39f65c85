import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_delta, random_problem, t1_problem, t1_theta
from gbdmpc.cuts import (CutBuffer, CutError, FarkasRecord, OptimalRecord, angle, build_feasibility_cuts,
                         build_optimality_cut, farkas_record, instantiate, optimal_record,
                         shift_certificate)
from gbdmpc.mld import MldProblem, ParameterVector, stack
from gbdmpc.qp import FarkasCertificate, Feasible, phase1, solve_qp, verify_farkas

ALPHA = math.radians(15)
T1_CERT = FarkasCertificate(np.array([0.0, 0.0]), np.array([1.0, 0.0, 1.0]))


def test_t1_feasibility_cut(t1, t1_th):
    cuts = build_feasibility_cuts(T1_CERT, t1, t1_th, [[0.0]])
    assert len(cuts) == 1
    c = cuts[0]
    assert c.Lambda.tolist() == [0.0, 1.0, 0.0, 1.0]
    assert c.V.tolist() == [[3.0]]
    tv = t1_th.vector
    assert c.value(tv, np.array([[0.0]])) == -1.0
    assert c.value(tv, np.array([[1.0]])) == 2.0


def test_unverified_certificate_rejected(t1, t1_th):
    with pytest.raises(CutError):
        build_feasibility_cuts(T1_CERT, t1, t1_th, [[1.0]])


def test_shift_moves_step1_blocks_to_step0():
    p = t1_problem(N=2)
    th = t1_theta(p)
    delta = [[1.0], [0.0]]
    cert = FarkasCertificate(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0, 0.0, 1.0]))
    qp = stack(p, th, delta)
    assert verify_farkas(cert, qp.A, qp.b, qp.C, qp.d)
    sh = shift_certificate(p, cert, 1)
    assert sh.lambda_tilde.tolist() == [1.0, 0.0, 1.0, 0.0, 0.0, 0.0]
    assert sh.nu_tilde.tolist() == [0.0, 0.0, 0.0]
    cuts = build_feasibility_cuts(cert, p, th, delta)
    assert [c.shift for c in cuts] == [0, 1]
    assert cuts[0].V.tolist() == [[0.0], [3.0]] and cuts[0].last_active_step == 1
    assert cuts[1].V.tolist() == [[3.0], [0.0]] and cuts[1].last_active_step == 0


def _chain_problem(N=3):
    # x+ = x + u, |u| <= 0.1, step-k row -x[k] <= theta
    return MldProblem(E=[[1.0]], F=[[1.0]], G=[[0.0]], H1=[[0.0], [0.0], [-1.0]],
                      H2=[[1.0], [-1.0], [0.0]], H3=np.zeros((3, 1)), Q=[[1.0]], R=[[1.0]],
                      QN=[[1.0]], xg=[0.0], N=N)


def test_full_support_certificate_gives_N_minus_1_shifts():
    N = 4
    p = _chain_problem(N)
    tb = np.tile([0.1, 0.1, 10.0], (N, 1))
    tb[N - 1, 2] = -1.0  # x[N-1] >= 1 is unreachable from x0 = 0
    th = ParameterVector(np.array([0.0]), tb)
    qp = stack(p, th, np.zeros((N, 1)))
    cert = phase1(qp.A, qp.b, qp.C, qp.d)
    assert isinstance(cert, FarkasCertificate)
    cuts = build_feasibility_cuts(cert, p, th, np.zeros((N, 1)))
    assert len(cuts) == N


def test_t1_optimality_cut(t1, t1_th):
    sol = solve_qp(stack(t1, t1_th, [[1.0]]))
    cut = build_optimality_cut(sol, t1, t1_th, [[1.0]])
    assert np.allclose(cut.Lambda, [-1.0, 0.0, 0.0, 0.0])
    assert np.allclose(cut.V, [[-1.0]])
    assert cut.C == pytest.approx(-0.5, abs=1e-12)
    assert cut.value(t1_th.vector, np.array([[1.0]])) == pytest.approx(0.5, abs=1e-12)
    # C = v + Lambda' theta_q + V' delta_q
    assert cut.C == pytest.approx(sol.v + cut.Lambda @ cut.theta_q + np.sum(cut.V * cut.delta_q), rel=1e-8)


def test_t1_optimality_cut_perturbed(t1, t1_th):
    sol = solve_qp(stack(t1, t1_th, [[1.0]]))
    cut = build_optimality_cut(sol, t1, t1_th, [[1.0]])
    th2 = t1_theta(x_in=0.1)
    bound = cut.value(th2.vector, np.array([[1.0]]))
    assert bound == pytest.approx(0.6)
    v2 = solve_qp(stack(t1, th2, [[1.0]])).v
    assert v2 == pytest.approx(0.615)
    assert v2 >= bound


def test_zero_cost_optimality_cut():
    p = MldProblem(E=[[1.0]], F=[[1.0]], G=[[0.0]], H1=np.zeros((2, 1)), H2=[[1.0], [-1.0]],
                   H3=np.zeros((2, 1)), Q=[[1.0]], R=[[1.0]], QN=[[1.0]], xg=[0.0], N=1)
    th = ParameterVector.constant(p, [0.0], [1.0, 1.0])
    sol = solve_qp(stack(p, th, [[0.0]]))
    cut = build_optimality_cut(sol, p, th, [[0.0]])
    assert np.allclose(cut.Lambda, 0.0) and np.allclose(cut.V, 0.0) and cut.C == pytest.approx(0.0)


def test_bad_duals_rejected(t1, t1_th):
    sol = solve_qp(stack(t1, t1_th, [[1.0]]))
    sol.v = -0.5  # dual value 1/2 above the claimed primal value contradicts weak duality
    with pytest.raises(CutError):
        build_optimality_cut(sol, t1, t1_th, [[1.0]])


def test_instantiate_examples(t1, t1_th):
    buf = CutBuffer()
    buf.store([farkas_record(T1_CERT, t1, t1_th, [[0.0]])])
    assert instantiate(buf, t1, t1_th).feas_S.tolist() == [-1.0]
    moved = instantiate(buf, t1, t1_theta(third=-0.5))
    assert moved.feas_S.tolist() == [0.5]
    assert moved.feasible(np.array([[0.0]])) and moved.feasible(np.array([[1.0]]))
    # the moved wall really does make delta = 0 feasible
    assert isinstance(phase1(*_abcd(stack(t1, t1_theta(third=-0.5), [[0.0]]))), Feasible)
    sol = solve_qp(stack(t1, t1_th, [[1.0]]))
    buf.store((), [optimal_record(sol, t1, t1_th, [[1.0]])])
    z = instantiate(buf, t1, np.zeros(4))
    assert z.feas_S.tolist() == [0.0]
    assert z.opt_S[0] == pytest.approx(buf.optimal[0].cut.C)


def _abcd(qp):
    return qp.A, qp.b, qp.C, qp.d


def test_instantiate_dimension_mismatch(t1, t1_th):
    buf = CutBuffer()
    buf.store([farkas_record(T1_CERT, t1, t1_th, [[0.0]])])
    p2 = t1_problem(N=2)
    with pytest.raises(CutError):
        instantiate(buf, p2, t1_theta(p2))


def _ray(*v):
    return FarkasRecord(FarkasCertificate(np.array(v, float), np.zeros(0)), ())


def _pt(*v):
    return OptimalRecord(np.array(v, float), np.zeros(0), None)


def test_store_colinear_rejected():
    buf = CutBuffer(alpha=ALPHA)
    buf.store([_ray(1, 0), _ray(2, 0)])
    assert len(buf.farkas) == 1


def test_store_orthogonal_kept():
    buf = CutBuffer(alpha=ALPHA)
    buf.store([_ray(1, 0), _ray(0, 1)])
    assert len(buf.farkas) == 2


def test_store_fifo_eviction():
    buf = CutBuffer(K_feas=1, alpha=ALPHA)
    a, b = _ray(1, 0), _ray(0, 1)
    buf.store([a])
    buf.store([b])
    assert buf.farkas == [b]
    assert buf.evicted_feas == 1


def test_store_ball_dedup():
    buf = CutBuffer(epsilon=1.0)
    buf.store((), [_pt(0, 0), _pt(0.5, 0), _pt(2, 0)])
    assert [r.point.tolist() for r in buf.optimal] == [[0, 0], [2, 0]]


@pytest.mark.parametrize("u,v,expect", [((1, 0), (0, 1), math.pi / 2), ((1, 1), (2, 2), 0.0),
                                        ((1, 0), (-1, 0), math.pi)])
def test_angle(u, v, expect):
    assert angle(u, v) == pytest.approx(expect, abs=1e-7)


def test_angle_zero_vector():
    with pytest.raises(CutError):
        angle((0, 0), (1, 0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=30),
       st.integers(1, 6), st.floats(0.0, 0.8))
def test_buffer_capacity_and_dedup(vecs, K, alpha):
    buf = CutBuffer(K_feas=K, K_opt=K, epsilon=0.3, alpha=alpha)
    for v in vecs:
        if np.linalg.norm(v) < 1e-3:
            continue
        buf.store([_ray(*v)], [_pt(*v)])
        assert len(buf.farkas) <= K and len(buf.optimal) <= K
        rays = [r.ray for r in buf.farkas]
        for i in range(len(rays)):
            for j in range(i):
                assert angle(rays[i], rays[j]) >= alpha
        pts = [r.point for r in buf.optimal]
        for i in range(len(pts)):
            for j in range(i):
                assert np.linalg.norm(pts[i] - pts[j]) >= 0.3


def test_bind_flushes(t1, t1_th):
    buf = CutBuffer(problem=t1)
    buf.store([farkas_record(T1_CERT, t1, t1_th, [[0.0]])],
              [optimal_record(solve_qp(stack(t1, t1_th, [[1.0]])), t1, t1_th, [[1.0]])])
    moved_goal = t1_problem()
    moved_goal.xg = np.array([1.0])
    buf.bind(moved_goal)
    assert len(buf.farkas) == 1 and len(buf.optimal) == 0
    other = t1_problem()
    other.E = np.array([[0.9]])
    buf.bind(other)
    assert len(buf.farkas) == 0


# -- soundness on random problems ---------------------------------------------


def _tight_theta(rng, problem, theta):
    tb = theta.theta_bar - rng.uniform(0.0, 1.5, size=theta.theta_bar.shape) * (rng.uniform() < 0.5)
    return ParameterVector(theta.x_in + rng.normal(scale=0.3, size=theta.x_in.size), tb)


def _harvest(seed, n=6):
    """Random problem plus the certificates and optimal duals seen at a few random (theta, delta)."""
    rng = np.random.default_rng(seed)
    problem, theta = random_problem(seed)
    farkas, optimal = [], []
    for _ in range(n):
        th = _tight_theta(rng, problem, theta)
        dl = random_delta(rng, problem)
        res = solve_qp(stack(problem, th, dl))
        if isinstance(res, FarkasCertificate):
            farkas.append((res, th, dl))
        else:
            optimal.append((res, th, dl))
    return rng, problem, theta, farkas, optimal


def test_cut_soundness_500_probes():
    probes = violated = 0
    seed = 0
    while probes < 500:
        rng, problem, theta, farkas, optimal = _harvest(seed)
        seed += 1
        fcuts = [c for cert, th, dl in farkas for c in build_feasibility_cuts(cert, problem, th, dl)]
        ocuts = [build_optimality_cut(s, problem, th, dl) for s, th, dl in optimal]
        for _ in range(10):
            th2 = _tight_theta(rng, problem, theta)
            dl2 = random_delta(rng, problem)
            tv = th2.vector
            qp = stack(problem, th2, dl2)
            res = solve_qp(qp)
            probes += 1
            for c in fcuts:
                if c.value(tv, dl2) < -1e-9:
                    violated += 1
                    assert isinstance(res, FarkasCertificate)
            if not isinstance(res, FarkasCertificate):
                for c in ocuts:
                    assert res.v >= c.value(tv, dl2) - 1e-6 * (1 + abs(res.v))
    assert violated > 0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_shifted_certificates_dual_feasible(seed):
    rng = np.random.default_rng(seed)
    problem, theta = random_problem(seed)
    th = ParameterVector(theta.x_in, theta.theta_bar - rng.uniform(0.0, 3.0, size=theta.theta_bar.shape))
    dl = random_delta(rng, problem)
    qp = stack(problem, th, dl)
    cert = solve_qp(qp)
    if not isinstance(cert, FarkasCertificate):
        return
    scale = qp.scale
    for m in range(problem.N):
        c = cert if m == 0 else shift_certificate(problem, cert, m)
        assert np.abs(qp.A.T @ c.nu_tilde + qp.C.T @ c.lambda_tilde).max() <= 1e-7 * scale
        assert c.lambda_tilde.min() >= -1e-9
    for c in build_feasibility_cuts(cert, problem, th, dl):
        assert np.all(np.abs(c.V[c.last_active_step + 1:]) <= 1e-12)
