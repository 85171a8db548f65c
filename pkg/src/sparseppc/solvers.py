"""Packet solvers: least squares, ridge, FISTA (l1-regularized), and OMP.

All four consume the precomputed horizon matrices and a state, and return a
full packet of ``N`` planned inputs.  Internally everything is reduced to the
Gram matrix ``G'G`` and the correlation ``G'Hx`` so the per-iteration work is
independent of the stacked dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from .errors import DegeneracyError, DesignError, ParameterError
from .plant import HorizonMatrices, _frozen


class SolverTag(Enum):
    L1L2 = "l1l2"
    L0_OMP = "l0_omp"
    LS = "ls"
    RIDGE = "ridge"


class StepRule(Enum):
    # Fixed step 1/L with L = 2 lambda_max(G'G), the gradient Lipschitz
    # constant of ||G u - H x||^2.
    LIPSCHITZ_CONST = "lipschitz_const"


@dataclass(frozen=True)
class SolverSettings:
    """Shared numeric knobs.

    ``zero_tol`` is a relative floor: an entry counts as nonzero when its
    magnitude exceeds ``zero_tol * (1 + ||u||_inf)``.  ``fista_tol`` stops the
    proximal-gradient loop on relative objective stagnation; a KKT residual
    below ``1e-6 * mu`` stops it early.
    """

    zero_tol: float = 1e-8
    fista_tol: float = 1e-10
    fista_max_iter: int = 20000
    step_rule: StepRule = StepRule.LIPSCHITZ_CONST

    def __post_init__(self):
        if self.zero_tol <= 0.0 or self.fista_tol <= 0.0:
            raise ParameterError("zero_tol and fista_tol must be positive")
        if self.fista_max_iter < 1:
            raise ParameterError("fista_max_iter must be at least 1")


@dataclass(frozen=True)
class Packet:
    """A planned input sequence with solver diagnostics.

    ``u`` has length ``N`` of the horizon matrices that produced it;
    ``sparsity`` counts entries above the zero threshold; ``certificate``
    holds solver-specific diagnostics (KKT residual for the l1 solver,
    constraint slack for OMP, normal-equation residual for the quadratic
    solvers).
    """

    u: np.ndarray
    sparsity: int
    solver_tag: SolverTag
    iterations: int
    certificate: dict


def count_nonzero(u: np.ndarray, zero_tol: float = 1e-8) -> int:
    """Entries with magnitude above ``zero_tol * (1 + ||u||_inf)``."""
    u = np.asarray(u, dtype=float)
    scale = 1.0 + (float(np.max(np.abs(u))) if u.size else 0.0)
    return int(np.count_nonzero(np.abs(u) > zero_tol * scale))


def _state_vector(hm: HorizonMatrices, x) -> np.ndarray:
    n = hm.H.shape[1]
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise ParameterError(f"x must have length {n}, got shape {x.shape}")
    return x


def _cho_gram(G: np.ndarray):
    try:
        return scipy.linalg.cho_factor(G.T @ G)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded upstream
        raise DegeneracyError("G'G is numerically singular") from exc


def least_squares_packet(hm: HorizonMatrices, x) -> Packet:
    """Unregularized minimizer ``(G'G)^(-1) G'Hx`` of ``||G u - H x||^2``."""
    x = _state_vector(hm, x)
    G = hm.G
    GtG = G.T @ G
    rhs = G.T @ (hm.H @ x)
    cho = _cho_gram(G)
    u = scipy.linalg.cho_solve(cho, rhs)
    # One refinement pass keeps the normal-equation residual at rounding level.
    u = u + scipy.linalg.cho_solve(cho, rhs - GtG @ u)
    residual = float(np.max(np.abs(GtG @ u - rhs))) if u.size else 0.0
    limit = 1e-8 * (1.0 + float(np.max(np.abs(rhs))))
    if residual > limit:
        raise DegeneracyError(
            f"normal equations too ill-conditioned: residual {residual:.3e} "
            f"exceeds {limit:.3e}"
        )
    return Packet(u=_frozen(u), sparsity=count_nonzero(u),
                  solver_tag=SolverTag.LS, iterations=0,
                  certificate={"normal_eq_residual": residual})


def ridge_packet(hm: HorizonMatrices, r: float, x) -> Packet:
    """Minimizer ``(G'G + r I)^(-1) G'Hx`` of ``||G u - H x||^2 + r ||u||^2``."""
    r = float(r)
    if r <= 0.0:
        raise ParameterError(f"ridge weight r must be positive, got {r}")
    x = _state_vector(hm, x)
    G = hm.G
    M = G.T @ G + r * np.eye(hm.N)
    rhs = G.T @ (hm.H @ x)
    u = np.linalg.solve(M, rhs)
    residual = float(np.max(np.abs(M @ u - rhs)))
    return Packet(u=_frozen(u), sparsity=count_nonzero(u),
                  solver_tag=SolverTag.RIDGE, iterations=0,
                  certificate={"normal_eq_residual": residual})


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lipschitz_constant(GtG: np.ndarray, tol: float = 1e-8,
                       max_iter: int = 1000) -> float:
    """``lambda_max`` of an SPD Gram matrix by power iteration."""
    N = GtG.shape[0]
    v = np.ones(N) + 1e-3 * np.arange(N)
    v /= np.linalg.norm(v)
    lam_prev = np.inf
    lam = 0.0
    for _ in range(max_iter):
        w = GtG @ v
        lam = float(v @ w)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            break
        lam_prev = lam
    return lam


def _kkt_residual(u: np.ndarray, g: np.ndarray, mu: float,
                  zero_tol: float) -> float:
    # g is the smooth gradient 2 G'(Gu - Hx).  On the support the gradient
    # must sit at -mu sign(u); off it, inside the interval [-mu, mu].
    scale = 1.0 + (float(np.max(np.abs(u))) if u.size else 0.0)
    on = np.abs(u) > zero_tol * scale
    res = 0.0
    if np.any(on):
        res = float(np.max(np.abs(g[on] + mu * np.sign(u[on]))))
    if np.any(~on):
        res = max(res, float(np.max(np.maximum(np.abs(g[~on]) - mu, 0.0))))
    return res


def fista_l1l2(hm: HorizonMatrices, mu: float, x,
               settings: SolverSettings | None = None) -> Packet:
    """Accelerated proximal gradient for ``||G u - H x||^2 + mu ||u||_1``.

    Starts from ``u = 0`` with step ``1/L``; restarts the momentum whenever
    the objective would increase, so the accepted objective sequence is
    nonincreasing.  States whose correlation ``||G'Hx||_inf`` does not exceed
    ``mu / 2`` yield the exact zero packet after one iteration.
    """
    mu = float(mu)
    if mu <= 0.0:
        raise ParameterError(f"mu must be positive, got {mu}")
    settings = settings if settings is not None else SolverSettings()
    x = _state_vector(hm, x)

    G = hm.G
    GtG = G.T @ G
    Hx = hm.H @ x
    b = G.T @ Hx
    const = float(Hx @ Hx)
    L = 2.0 * lipschitz_constant(GtG)
    if L <= 0.0:
        raise DegeneracyError("G'G has no positive eigenvalue")
    step = 1.0 / L
    shrink = mu / L

    def evaluate(u):
        q = GtG @ u
        smooth = float(u @ q) - 2.0 * float(u @ b) + const
        return smooth + mu * float(np.sum(np.abs(u))), q

    u = np.zeros(hm.N)
    J, q = evaluate(u)
    y = u
    t = 1.0
    best_u, best_J, best_q = u, J, q
    converged = False
    iterations = 0
    for iterations in range(1, settings.fista_max_iter + 1):
        grad_y = 2.0 * ((GtG @ y) - b)
        u_new = _soft_threshold(y - step * grad_y, shrink)
        J_new, q_new = evaluate(u_new)
        if J_new > J:
            # Momentum overshoot: plain proximal step from the last accepted
            # iterate, which the majorizer guarantees not to increase.
            t = 1.0
            u_new = _soft_threshold(u - step * 2.0 * (q - b), shrink)
            J_new, q_new = evaluate(u_new)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = u_new + ((t - 1.0) / t_next) * (u_new - u)
        delta = abs(J - J_new)
        u, J, q, t = u_new, J_new, q_new, t_next
        if J < best_J:
            best_u, best_J, best_q = u, J, q
        kkt = _kkt_residual(u, 2.0 * (q - b), mu, settings.zero_tol)
        if kkt <= 1e-6 * mu or delta <= settings.fista_tol * (1.0 + abs(J)):
            converged = True
            break

    kkt_final = _kkt_residual(best_u, 2.0 * (best_q - b), mu, settings.zero_tol)
    certificate = {
        "kkt_residual": kkt_final,
        "objective": best_J,
        "converged": converged,
    }
    return Packet(u=_frozen(best_u),
                  sparsity=count_nonzero(best_u, settings.zero_tol),
                  solver_tag=SolverTag.L1L2, iterations=iterations,
                  certificate=certificate)


def omp_l0(hm: HorizonMatrices, W, x,
           settings: SolverSettings | None = None,
           validate_w: bool = True) -> Packet:
    """Greedy support growth until ``||G u - H x||^2 <= x' W x``.

    Each round adds the unselected index with the largest absolute
    correlation against the residual (ties break to the lowest index) and
    refits by least squares on the support.  ``validate_w=False`` skips the
    check that ``W`` strictly dominates the least-squares weight; audit code
    uses it to probe deliberately corrupted designs.
    """
    settings = settings if settings is not None else SolverSettings()
    x = _state_vector(hm, x)
    W = np.asarray(W, dtype=float)
    n = x.shape[0]
    if W.shape != (n, n):
        raise ParameterError(f"W must have shape ({n}, {n}), got {W.shape}")
    W = 0.5 * (W + W.T)
    if validate_w:
        from .design import compute_wstar

        gap = W - compute_wstar(hm)
        lam = float(np.linalg.eigvalsh(0.5 * (gap + gap.T))[0])
        if lam <= 0.0:
            raise DesignError(
                "W does not strictly dominate the least-squares weight "
                f"(smallest eigenvalue of W - W* is {lam:.3e})"
            )

    G = hm.G
    bound = float(x @ (W @ x))
    Hx = hm.H @ x
    u = np.zeros(hm.N)
    resid = -Hx
    resid2 = float(resid @ resid)
    support: list[int] = []
    while resid2 > bound:
        if len(support) == hm.N:
            raise DesignError(
                "constraint infeasible even at full support "
                f"(residual {resid2:.6e} > bound {bound:.6e}); "
                "W is inconsistent with these horizon matrices"
            )
        corr = np.abs(G.T @ resid)
        corr[support] = -np.inf
        support.append(int(np.argmax(corr)))
        cols = G[:, support]
        coef, *_ = np.linalg.lstsq(cols, Hx, rcond=None)
        u = np.zeros(hm.N)
        u[support] = coef
        resid = cols @ coef - Hx
        resid2 = float(resid @ resid)

    certificate = {"constraint_slack": bound - resid2, "feasible": True}
    return Packet(u=_frozen(u), sparsity=count_nonzero(u, settings.zero_tol),
                  solver_tag=SolverTag.L0_OMP, iterations=len(support),
                  certificate=certificate)
