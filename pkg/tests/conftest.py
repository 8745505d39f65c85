import numpy as np
import pytest

from gbdmpc.benchmarks.random_miqp import RandomMiqpSpec, random_instance
from gbdmpc.mld import MldProblem, ParameterVector


def t1_problem(N=1):
    """Scalar system x+ = x + u + delta with rows u <= 1, -u <= 1, -u - 3 delta <= -2."""
    return MldProblem(E=[[1.0]], F=[[1.0]], G=[[1.0]],
                      H1=np.zeros((3, 1)), H2=[[1.0], [-1.0], [-1.0]], H3=[[0.0], [0.0], [-3.0]],
                      Q=[[1.0]], R=[[1.0]], QN=[[1.0]], xg=[0.0], N=N)


def t1_theta(problem=None, third=-2.0, x_in=0.0):
    p = problem or t1_problem()
    return ParameterVector.constant(p, [x_in], [1.0, 1.0, third])


@pytest.fixture
def t1():
    return t1_problem()


@pytest.fixture
def t1_th():
    return t1_theta()


def random_problem(seed, spec=None):
    return random_instance(np.random.default_rng(seed), spec or RandomMiqpSpec())


def random_delta(rng, problem):
    return rng.integers(0, 2, size=(problem.N, problem.ndelta)).astype(float)
