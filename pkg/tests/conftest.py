"""Shared fixtures: the fourth-order benchmark plant and its two designs."""
from __future__ import annotations

import numpy as np
import pytest

import sparseppc as sp

# Open-loop unstable benchmark (eigenvalues ~ {1.526, -1.144, 0.420, -0.772}).
BENCH_A = [
    [0.0685, 1.1221, -0.6615, 0.3087],
    [0.9512, 0.3237, -0.2253, -0.5701],
    [-0.3448, -0.4112, -0.8299, 0.5388],
    [0.0359, -0.6418, -0.1262, 0.4669],
]
BENCH_B = [2.3459, 0.0893, 2.2103, 0.7440]
BENCH_N = 10
BENCH_MU = 10.7167
# epsilon back-solved from r = mu^2 N / (4 eps) so the design lands on r = 4.1042
BENCH_EPS = BENCH_MU ** 2 * BENCH_N / (4.0 * 4.1042)
BENCH_BETA = 2.0 / 3.0


@pytest.fixture(scope="session")
def bench_plant():
    return sp.PlantModel(A=BENCH_A, B=BENCH_B)


@pytest.fixture(scope="session")
def bench_l1l2(bench_plant):
    return sp.design_l1l2(bench_plant, np.eye(4), BENCH_MU, BENCH_N, BENCH_EPS)


@pytest.fixture(scope="session")
def bench_l0(bench_plant):
    return sp.design_l0(bench_plant, np.eye(4), BENCH_N, BENCH_BETA)


def random_reachable_plant(rng, n, b_scale=1.0, rho=None):
    """Draw a random plant, rejecting the (measure-zero) unreachable ones.

    ``rho`` rescales A to that spectral radius; raw standard-normal draws
    have radius ~sqrt(n), which at n=4, N=10 stacks into horizon matrices
    too ill-conditioned for tight identity checks.
    """
    for _ in range(100):
        A = rng.standard_normal((n, n))
        if rho is not None:
            radius = max(abs(np.linalg.eigvals(A)))
            if radius > 0:
                A *= rho / radius
        B = b_scale * rng.standard_normal(n)
        plant = sp.PlantModel(A=A, B=B)
        if sp.check_reachability(plant):
            return plant
    raise AssertionError("could not draw a reachable plant")


def random_spd(rng, n, spread=1.0):
    M = rng.standard_normal((n, n))
    return M @ M.T + spread * np.eye(n)
