import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_delta, random_problem, t1_problem, t1_theta
from gbdmpc.cuts import cut_coefficients
from gbdmpc.mld import (MldProblem, ParameterVector, ProblemError, load_problem, problem_from_dict,
                        problem_to_dict, save_problem, solve_dare, stack, validate)


def dare_fixed_point(e, f, q, r, iters=20000):
    p = q
    for _ in range(iters):
        p = q + e * p * e - (e * p * f) ** 2 / (r + f * p * f)
    return p


def test_t1_stack_delta0(t1, t1_th):
    qp = stack(t1, t1_th, [[0.0]])
    assert qp.b.tolist() == [0.0, 0.0]
    assert qp.d.tolist() == [1.0, 1.0, -2.0]


def test_t1_stack_delta1(t1, t1_th):
    qp = stack(t1, t1_th, [[1.0]])
    assert qp.b.tolist() == [0.0, 1.0]
    assert qp.d.tolist() == [1.0, 1.0, 1.0]


def test_t1_feasibility_matches_grid(t1, t1_th):
    # brute-force feasibility over a fine u-grid
    us = np.linspace(-1.5, 1.5, 3001)
    for delta, expect in ((0.0, False), (1.0, True)):
        qp = stack(t1, t1_th, [[delta]])
        ok = False
        for u in us:
            z = np.array([0.0, u + delta, u])
            if np.allclose(qp.A @ z, qp.b) and np.all(qp.C @ z <= qp.d + 1e-12):
                ok = True
                break
        assert ok is expect


def test_stack_equalities_encode_dynamics(t1, t1_th):
    qp = stack(t1, t1_th, [[1.0]])
    z = np.array([0.0, 0.3 + 1.0, 0.3])
    assert np.allclose(qp.A @ z, qp.b)


def test_zero_horizon_rejected():
    with pytest.raises(ProblemError):
        validate(t1_problem(N=0))


def test_stack_dimension_mismatch(t1):
    with pytest.raises(ProblemError):
        stack(t1, np.zeros(3), [[0.0]])
    with pytest.raises(ProblemError):
        stack(t1, t1_theta(), [[0.0], [1.0]])
    with pytest.raises(ProblemError):
        stack(t1, t1_theta(), [[0.5]])


def test_validate_identity_ok():
    validate(t1_problem())


def _with_q(Q):
    return MldProblem(E=np.eye(2), F=np.eye(2), G=np.zeros((2, 1)), H1=np.zeros((1, 2)),
                      H2=np.zeros((1, 2)), H3=np.zeros((1, 1)), Q=Q, R=np.eye(2), QN=np.eye(2),
                      xg=np.zeros(2), N=2)


def test_validate_semidefinite_rejected():
    with pytest.raises(ProblemError, match="positive definite"):
        validate(_with_q(np.diag([1.0, 0.0])))


def test_validate_nonsymmetric_rejected():
    with pytest.raises(ProblemError):
        validate(_with_q(np.array([[1.0, 0.5], [0.0, 1.0]])))


def test_validate_shape_mismatch():
    p = _with_q(np.eye(2))
    p.H3 = np.zeros((2, 1))
    with pytest.raises(ProblemError, match="H3"):
        validate(p)


@pytest.mark.parametrize("e,f,q,r,expect", [
    (1.0, 1.0, 1.0, 1.0, (1 + math.sqrt(5)) / 2),
    (0.5, 0.0, 1.0, 1.0, 4.0 / 3.0),
    (0.5, 1.0, 0.0, 1.0, 0.0),
])
def test_dare_scalar(e, f, q, r, expect):
    P = solve_dare([[e]], [[f]], [[q]], [[r]])
    assert P[0, 0] == pytest.approx(expect, abs=1e-9)
    assert P[0, 0] == pytest.approx(dare_fixed_point(e, f, q, r), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dare_residual(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 4), rng.integers(1, 3)
    E = rng.normal(size=(n, n))
    F = rng.normal(size=(n, m))
    A = rng.normal(size=(n, n))
    Q = A @ A.T + 0.1 * np.eye(n)
    R = np.eye(m)
    P = solve_dare(E, F, Q, R)
    S = R + F.T @ P @ F
    res = Q + E.T @ P @ E - E.T @ P @ F @ np.linalg.solve(S, F.T @ P @ E) - P
    assert np.linalg.norm(res, "fro") <= 1e-9 * max(1.0, np.linalg.norm(P, "fro"))


def test_dare_unstabilizable_raises():
    with pytest.raises(RuntimeError):
        solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]], max_iter=200)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_wiring_identity(seed):
    problem, theta = random_problem(seed)
    rng = np.random.default_rng(seed + 1)
    delta = random_delta(rng, problem)
    qp = stack(problem, theta, delta)
    nu = rng.normal(size=qp.b.size)
    lam = rng.normal(size=qp.d.size)
    Lam, V = cut_coefficients(problem, nu, lam)
    lhs = qp.b @ nu + qp.d @ lam
    rhs = Lam @ theta.vector + np.sum(V * delta)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stack_deterministic(seed):
    problem, theta = random_problem(seed)
    delta = random_delta(np.random.default_rng(seed), problem)
    a, b = stack(problem, theta, delta), stack(problem, theta, delta)
    for name in ("Qbar", "z_g", "A", "b", "C", "d"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_parameter_vector_layout(t1):
    th = ParameterVector([0.5], [[1.0, 2.0, 3.0]])
    assert th.vector.tolist() == [0.5, 1.0, 2.0, 3.0]
    back = ParameterVector.from_vector(t1, th.vector)
    assert back.theta_bar.shape == (1, 3)


def test_problem_file_round_trip(tmp_path):
    p, _ = random_problem(3)
    path = tmp_path / "p.json"
    save_problem(p, path)
    q = load_problem(path)
    for name in ("E", "F", "G", "H1", "H2", "H3", "Q", "R", "QN", "xg"):
        assert np.array_equal(getattr(p, name), getattr(q, name))
    data = json.loads(path.read_text())
    assert set(data["dims"]) == {"nx", "nu", "ndelta", "nc", "N"}


def test_problem_file_missing_key():
    d = problem_to_dict(t1_problem())
    del d["H3"]
    with pytest.raises(ProblemError, match="H3"):
        problem_from_dict(d)
