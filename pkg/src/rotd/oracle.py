"""Exact model-based quantities and reference solutions.

Everything here works from the full model (or an explicit dense system)
and is used to certify the stochastic solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .environments import MdpModel, Sample
from .features import FeatureMap
from .solvers import PrimalDualState, SolverConfig, average_iterates

ACTIVE_TOL = 1e-8


class RankDeficientError(np.linalg.LinAlgError):
    """The feature Gram matrix is singular (basis not full column rank)."""


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"system matrix is numerically singular (condition estimate {cond:.3e})")
        self.cond = cond


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, best_x: np.ndarray, best_objective: float):
        super().__init__(f"{message}; best objective {best_objective:.12g}")
        self.best_x = best_x
        self.best_objective = best_objective


@dataclass
class LinearSystem:
    """Exact ``A = E[A_t]``, ``b = E[b_t]`` and the Gram matrix ``C = Phi' Xi Phi``.

    When ``C`` is singular (only allowed on request) the MSPBE projects onto
    the span of the features through an orthonormal basis instead of ``C^-1``.
    """

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    Phi: np.ndarray
    model: MdpModel
    eta: float
    gamma: float
    _chol: tuple | None = None
    _span: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.Phi.shape[1]

    @property
    def full_rank(self) -> bool:
        return self._chol is not None


def exact_system(model: MdpModel, features: FeatureMap, eta: float, gamma: float | None = None,
                 allow_rank_deficient: bool = False) -> LinearSystem:
    """Assemble the expected TDC linear system for ``model`` under ``features``."""
    gamma = model.gamma if gamma is None else gamma
    Phi = features.batch(range(model.n_states))
    Phi[list(model.absorbing)] = 0.0
    Xi = model.state_dist
    P = model.transition
    EPn = P @ Phi                      # E[phi' | s]
    XPhi = Xi[:, None] * Phi
    C = Phi.T @ XPhi
    D = XPhi.T @ (Phi - gamma * EPn)   # E[phi (phi - gamma phi')^T]
    A = np.block([
        [eta * C, eta * D],
        [gamma * (EPn.T @ XPhi), D],
    ])
    Rphi = XPhi.T @ model.reward
    b = np.concatenate([eta * Rphi, Rphi])
    C = 0.5 * (C + C.T)

    chol, span = None, None
    eig = np.linalg.eigvalsh(C)
    if eig.max() > 0 and eig.min() > 1e-10 * eig.max():
        chol = linalg.cho_factor(C, lower=True)
    else:
        if not allow_rank_deficient:
            raise RankDeficientError(
                "feature Gram matrix is singular: the basis is not full column rank over states "
                "with positive weight"
            ) from None
        U, s, _ = np.linalg.svd(np.sqrt(Xi)[:, None] * Phi, full_matrices=False)
        span = U[:, s > s.max() * 1e-10]
    return LinearSystem(A, b, C, Phi, model, eta, gamma, chol, span)


def bellman_residual(theta, system: LinearSystem) -> np.ndarray:
    """``T Phi theta - Phi theta`` over all states."""
    v = system.Phi @ theta
    return system.model.reward + system.gamma * (system.model.transition @ v) - v


def mspbe(theta, system: LinearSystem) -> float:
    """Mean-square projected Bellman error of ``theta``."""
    delta = bellman_residual(np.asarray(theta, dtype=float), system)
    xi = system.model.state_dist
    if system._chol is not None:
        z = system.Phi.T @ (xi * delta)
        return float(max(z @ linalg.cho_solve(system._chol, z), 0.0))
    z = system._span.T @ (np.sqrt(xi) * delta)
    return float(z @ z)


def solve_fixed_point(system: LinearSystem, least_squares: bool = False) -> np.ndarray:
    """Solve ``A x = b``; with ``least_squares`` return the minimum-norm solution."""
    if least_squares:
        return np.linalg.lstsq(system.A, system.b, rcond=None)[0]
    cond = np.linalg.cond(system.A)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystemError(cond)
    return np.linalg.solve(system.A, system.b)


def sample_system(sample: Sample, eta: float, gamma: float, trace=None, lam: float = 0.0):
    """Dense per-sample ``(A_t, b_t)``; with ``trace`` the eligibility-trace form."""
    phi = np.asarray(sample.phi, dtype=float)
    if trace is None:
        nxt = np.asarray(sample.phi_next, dtype=float)
        e, c = phi, 1.0
    else:
        nxt = np.asarray(sample.phi_bar_next, dtype=float)
        e, c = np.asarray(trace, dtype=float), 1.0 - lam
    diff = phi - gamma * nxt
    A_t = np.block([
        [eta * np.outer(phi, phi), eta * np.outer(e, diff)],
        [gamma * c * np.outer(nxt, e), np.outer(e, diff)],
    ])
    b_t = np.concatenate([eta * sample.reward * e, sample.reward * e])
    return A_t, b_t


def norm(v, m: float) -> float:
    return float(np.linalg.norm(v, ord=m))


# --------------------------------------------------------------------------
# diagnostics

@dataclass
class DiagnosticsRecord:
    iteration: int
    mspbe: float
    l2_residual: float
    dual_value: float
    delta: float
    theta_nnz: int
    w_nnz: int
    objective: float

    COLUMNS = ("iteration", "mspbe", "l2_residual", "dual_value", "delta", "theta_nnz", "w_nnz", "objective")

    def as_row(self) -> tuple:
        return tuple(getattr(self, c) for c in self.COLUMNS)


def count_active(v, tol: float = ACTIVE_TOL) -> int:
    return int(np.count_nonzero(np.abs(v) > tol))


def regularized_objective(A, b, x, rho1: float, rho2: float, m: float = 2.0) -> float:
    """``||A x - b||_m + rho1 ||theta||_1 + rho2 ||w||_1`` with ``x = [w; theta]``."""
    x = np.asarray(x, dtype=float)
    d = len(x) // 2
    return norm(A @ x - b, m) + rho1 * np.abs(x[d:]).sum() + rho2 * np.abs(x[:d]).sum()


def diagnostics_from_iterates(iteration: int, x, y, estimate, system: LinearSystem | None,
                              config: SolverConfig, delta: float = math.nan) -> DiagnosticsRecord:
    """Build a record from raw iterates.

    ``x``/``y`` are the current iterates (used for the residual and dual
    value); ``estimate`` is the solver's reported ``[w; theta]`` (used for
    MSPBE, sparsity counts, and the objective).  Without a system the exact
    quantities are NaN.
    """
    x = np.asarray(x, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    d = len(x) // 2
    theta_hat, w_hat = estimate[d:], estimate[:d]
    if system is None:
        ms = l2 = dv = obj = math.nan
    else:
        res = system.A @ x - system.b
        ms = mspbe(theta_hat, system)
        l2 = float(np.linalg.norm(res))
        dv = float(np.asarray(y) @ res)
        obj = regularized_objective(system.A, system.b, estimate, config.rho1, config.rho2, config.norm_pair[0])
    return DiagnosticsRecord(int(iteration), ms, l2, dv, float(delta), count_active(theta_hat),
                             count_active(w_hat), obj)


def duality_diagnostics(state: PrimalDualState, system: LinearSystem, config: SolverConfig,
                        delta: float = math.nan) -> DiagnosticsRecord:
    """Diagnostics for a solver state against the exact system."""
    if config.algorithm.primal_dual and state.t > 0:
        estimate = average_iterates(state)[0]
    else:
        estimate = state.x
    return diagnostics_from_iterates(state.t, state.x, state.y, estimate, system, config, delta)


# --------------------------------------------------------------------------
# reference solver

def _project_l1_ball(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit l1 ball (sort-based)."""
    if np.abs(v).sum() <= 1.0:
        return v.copy()
    mu = np.sort(np.abs(v))[::-1]
    cssv = np.cumsum(mu) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(mu - cssv / k > 0)[0][-1]
    tau = cssv[rho] / (rho + 1.0)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _dual_projection(m: float):
    if m == 2:
        return lambda y: y / max(1.0, np.linalg.norm(y))
    if m == 1:
        return lambda y: np.clip(y, -1.0, 1.0)
    if m == math.inf:
        return _project_l1_ball
    raise ValueError(f"unsupported residual norm m={m!r}")


def reference_solve(A, b, rho1: float, rho2: float, m: float = 2.0, tol: float = 1e-10,
                    max_iter: int = 2_000_000) -> np.ndarray:
    """Deterministic minimizer of ``||A x - b||_m + rho1 ||theta||_1 + rho2 ||w||_1``.

    Uses full-matrix primal-dual proximal iterations (prox on ``x``, exact
    projection onto the dual unit ball) with stepsizes ``tau = sigma =
    0.99 / ||A||_2``.  Stops when the duality gap against the dual problem
    ``max -b'y  s.t. ||y||_n <= 1, |A'y|_i <= rho_i`` falls below
    ``tol * max(1, f)`` (the dual iterate is scaled into the feasible set),
    or when the scaled fixed-point residual and the change in objective both
    stay below ``tol`` for 10 iterations.  Intended for small dense instances.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    if n % 2:
        raise ValueError("x = [w; theta] must have even length")
    d = n // 2
    thresholds = np.concatenate([np.full(d, rho2), np.full(d, rho1)])
    project = _dual_projection(m)
    L = np.linalg.norm(A, 2)
    if L == 0:
        return np.zeros(n)
    tau = sigma = 0.99 / L

    def f(x):
        return regularized_objective(A, b, x, rho1, rho2, m)

    def dual_bound(y):
        g = np.abs(A.T @ y)
        over = g > thresholds
        scale = (thresholds[over] / g[over]).min() if over.any() else 1.0
        return -float(b @ (scale * y))

    x = np.zeros(n)
    y = np.zeros(A.shape[0])
    best_x, best_f = x.copy(), f(x)
    prev_f = best_f
    quiet = 0
    for k in range(1, max_iter + 1):
        v = x - tau * (A.T @ y)
        x_new = np.maximum(v - tau * thresholds, 0.0) - np.maximum(-v - tau * thresholds, 0.0)
        y_new = project(y + sigma * (A @ (2.0 * x_new - x) - b))
        step = np.linalg.norm(x_new - x) / tau + np.linalg.norm(y_new - y) / sigma
        x, y = x_new, y_new
        fx = f(x)
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        quiet = quiet + 1 if (step < tol and abs(fx - prev_f) < tol) else 0
        prev_f = fx
        if quiet >= 10:
            return best_x if best_f < fx else x
        if k % 50 == 0 and best_f - dual_bound(y) <= tol * max(1.0, best_f):
            return best_x
    raise ConvergenceError(f"no convergence within {max_iter} iterations", best_x, best_f)


def optimality_violation(A, b, x, rho1: float, rho2: float) -> float:
    """Distance from zero to the subdifferential of the m=2 objective at ``x``.

    Requires a nonzero residual ``A x - b`` (smooth data-fit term).  Returns
    the worst coordinate violation of ``0 in grad + rho * d|x|``.
    """
    x = np.asarray(x, dtype=float)
    r = A @ x - b
    nr = np.linalg.norm(r)
    if nr == 0:
        raise ValueError("residual is zero; the data-fit term is not differentiable here")
    g = A.T @ r / nr
    d = len(x) // 2
    rho = np.concatenate([np.full(d, rho2), np.full(d, rho1)])
    viol = np.where(
        np.abs(x) > ACTIVE_TOL,
        np.abs(g + rho * np.sign(x)),
        np.maximum(np.abs(g) - rho, 0.0),
    )
    return float(viol.max())
