"""LTI plant description and horizon-stacked prediction matrices.

Every packet optimization in this package operates on the stacked operators
built here: ``Phi`` and ``Upsilon`` map an input sequence and an initial state
to the predicted trajectory over the horizon, ``Qbar`` carries the stage and
terminal weights, and ``G`` / ``H`` fold the weights in so each finite-horizon
quadratic cost collapses to a static least-squares term ``||G u - H x||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ParameterError

# Weight blocks must clear this eigenvalue floor; below it we refuse to take a
# matrix square root rather than silently regularize.
SPD_EIGENVALUE_FLOOR = 1e-14

# Relative singular-value cutoff for the controllability rank test.
REACHABILITY_RTOL = 1e-10


def _as_array(M, name: str) -> np.ndarray:
    arr = np.asarray(M, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} must be a finite, non-empty array")
    return arr


def require_spd(M, n: int, name: str) -> np.ndarray:
    """Validate that ``M`` is a symmetric positive definite ``n x n`` matrix.

    Returns the symmetrized copy.  Raises :class:`ParameterError` otherwise.
    """
    arr = _as_array(M, name)
    if arr.shape != (n, n):
        raise ParameterError(f"{name} must have shape ({n}, {n}), got {arr.shape}")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(arr).max())):
        raise ParameterError(f"{name} must be symmetric")
    sym = 0.5 * (arr + arr.T)
    w = np.linalg.eigvalsh(sym)
    if w[0] <= SPD_EIGENVALUE_FLOOR:
        raise ParameterError(
            f"{name} is not positive definite (smallest eigenvalue {w[0]:.3e})"
        )
    return sym


def spd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix via eigendecomposition."""
    w, V = np.linalg.eigh(M)
    root = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    return 0.5 * (root + root.T)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time pair ``x(k+1) = A x(k) + B u(k)`` with a scalar input.

    ``A`` is ``n x n``; ``B`` is accepted as a length-``n`` vector or an
    ``n x 1`` column and stored as a column.  Matrices are copied and marked
    read-only so a model can be shared freely across threads.
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_array(self.A, "A")
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ParameterError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = _as_array(self.B, "B")
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.shape != (n, 1):
            raise ParameterError(f"B must have shape ({n}, 1), got {B.shape}")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))

    @property
    def n(self) -> int:
        """State dimension."""
        return self.A.shape[0]


def propagate(plant: PlantModel, x: np.ndarray, u: float) -> np.ndarray:
    """One step of the plant recursion, ``A x + B u``."""
    x = np.asarray(x, dtype=float).reshape(plant.n)
    return plant.A @ x + plant.B[:, 0] * float(u)


def controllability_matrix(plant: PlantModel) -> np.ndarray:
    """The ``n x n`` matrix ``[B, AB, ..., A^(n-1) B]``."""
    n = plant.n
    cols = np.empty((n, n))
    v = plant.B[:, 0].copy()
    for k in range(n):
        cols[:, k] = v
        v = plant.A @ v
    return cols


def check_reachability(plant: PlantModel) -> bool:
    """Numerical full-rank test of the controllability matrix.

    Singular values below ``REACHABILITY_RTOL`` times the largest are treated
    as zero.
    """
    s = np.linalg.svd(controllability_matrix(plant), compute_uv=False)
    if s[0] == 0.0:
        return False
    return bool(int(np.sum(s > REACHABILITY_RTOL * s[0])) == plant.n)


@dataclass(frozen=True)
class HorizonMatrices:
    """Stacked prediction operators for a horizon of ``N`` steps.

    Fields
    ------
    N : horizon length.
    G : ``(N n, N)`` weighted input map ``Qbar^(1/2) Phi``.
    H : ``(N n, n)`` weighted state map ``-Qbar^(1/2) Upsilon``.
    Phi : ``(N n, N)`` block lower-triangular map; block ``(i, j)`` is
        ``A^(i-j) B``.
    Upsilon : ``(N n, n)`` stack of ``A, A^2, ..., A^N``.
    Qbar : ``(N n, N n)`` block diagonal of ``N - 1`` copies of ``Q`` followed
        by the terminal weight ``P``.
    phi_blocks : tuple of the ``N`` row blocks of ``Phi``, each ``(n, N)``.
    """

    N: int
    G: np.ndarray
    H: np.ndarray
    Phi: np.ndarray
    Upsilon: np.ndarray
    Qbar: np.ndarray
    phi_blocks: tuple


def build_horizon_matrices(plant: PlantModel, N: int, Q, P) -> HorizonMatrices:
    """Assemble the stacked operators for ``N`` prediction steps.

    Parameters
    ----------
    plant : PlantModel
        Must be reachable.
    N : int
        Horizon length, at least 1.
    Q, P : array_like
        Stage and terminal weights, both symmetric positive definite.

    Raises
    ------
    ParameterError
        For a non-reachable plant, an invalid horizon, or non-SPD weights.
    DegeneracyError
        If the weighted input map has numerically dependent columns, which
        would make ``G^T G`` singular.
    """
    if not isinstance(N, (int, np.integer)) or isinstance(N, bool) or N < 1:
        raise ParameterError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    n = plant.n
    Q = require_spd(Q, n, "Q")
    P = require_spd(P, n, "P")
    if not check_reachability(plant):
        raise ParameterError("plant (A, B) is not reachable")

    # Powers A^k B for k = 0 .. N-1, then the block triangle and the stack of
    # state-transition powers.
    powers = [plant.B[:, 0].copy()]
    for _ in range(N - 1):
        powers.append(plant.A @ powers[-1])

    Phi = np.zeros((N * n, N))
    for i in range(N):
        for j in range(i + 1):
            Phi[i * n:(i + 1) * n, j] = powers[i - j]

    Upsilon = np.empty((N * n, n))
    Apow = np.eye(n)
    for i in range(N):
        Apow = plant.A @ Apow
        Upsilon[i * n:(i + 1) * n, :] = Apow

    Qbar = np.zeros((N * n, N * n))
    Qbar_half = np.zeros((N * n, N * n))
    Q_half = spd_sqrt(Q)
    P_half = spd_sqrt(P)
    for i in range(N):
        block = P if i == N - 1 else Q
        half = P_half if i == N - 1 else Q_half
        sl = slice(i * n, (i + 1) * n)
        Qbar[sl, sl] = block
        Qbar_half[sl, sl] = half

    G = Qbar_half @ Phi
    H = -Qbar_half @ Upsilon

    s = np.linalg.svd(G, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= 1e-12 * s[0]:
        raise DegeneracyError(
            "G^T G is numerically singular: weighted input map has dependent "
            f"columns (singular value ratio {s[-1] / max(s[0], 1e-300):.3e})"
        )

    phi_blocks = tuple(_frozen(Phi[i * n:(i + 1) * n, :]) for i in range(N))
    return HorizonMatrices(
        N=N,
        G=_frozen(G),
        H=_frozen(H),
        Phi=_frozen(Phi),
        Upsilon=_frozen(Upsilon),
        Qbar=_frozen(Qbar),
        phi_blocks=phi_blocks,
    )
