"""Linear TD-family update rules.

The per-sample functions (``td_step``, ``tdc_step``, ``rotd_step``, ...) are
the readable reference definitions and return new state objects.  Whole
sample streams are run with :func:`run_solver`, which hands the loop to the
compiled kernel when available and to a NumPy loop otherwise.

Parameter vectors are ordered ``x = [w; theta]`` and the dual variable
``y = [y1; y2]`` is split the same way.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .environments import EpisodeBatch, Sample


class Algorithm(str, enum.Enum):
    TD = "TD"
    TDC = "TDC"
    ROTD = "RO-TD"
    GQ = "GQ"
    ROGQ = "RO-GQ"
    ROTD_EXT = "RO-TD-EXT"

    @property
    def primal_dual(self) -> bool:
        return self in (Algorithm.ROTD, Algorithm.ROGQ, Algorithm.ROTD_EXT)


# kernel dispatch codes; shared with _kernels.pyx and _pykernels.py
ALGORITHM_CODES = {
    Algorithm.TD: 0,
    Algorithm.TDC: 1,
    Algorithm.ROTD: 2,
    Algorithm.GQ: 3,
    Algorithm.ROGQ: 4,
    Algorithm.ROTD_EXT: 5,
}

NORM_PAIRS = {(2.0, 2.0), (1.0, math.inf), (math.inf, 1.0)}


class DivergenceError(FloatingPointError):
    """An iterate became non-finite."""

    def __init__(self, iteration: int, state=None):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration
        self.state = state


@dataclass(frozen=True)
class StepSchedule:
    """Stepsize ``alpha_t`` for ``t = 1, 2, ...``.

    ``constant`` gives ``c``; ``inv-sqrt`` gives ``c / sqrt(t)``.
    """

    c: float
    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in ("constant", "inv-sqrt"):
            raise ValueError(f"unknown stepsize schedule {self.kind!r}")
        if not self.c > 0:
            raise ValueError("stepsize must be positive")

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.c
        return self.c / math.sqrt(t)

    def values(self, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, self.c)
        return self.c / np.sqrt(np.arange(1, n + 1, dtype=float))


@dataclass(frozen=True)
class SolverConfig:
    alpha: StepSchedule
    gamma: float
    eta: float = 1.0
    rho1: float = 0.0
    rho2: float = 0.0
    norm_pair: tuple = (2.0, 2.0)
    algorithm: Algorithm = Algorithm.ROTD
    lam: float = 0.0

    def __post_init__(self):
        if not isinstance(self.alpha, StepSchedule):
            object.__setattr__(self, "alpha", StepSchedule(float(self.alpha)))
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        m, n = (float(v) for v in self.norm_pair)
        if (m, n) not in NORM_PAIRS:
            raise ValueError(f"norm pair {self.norm_pair} unsupported; use (2,2), (1,inf) or (inf,1)")
        object.__setattr__(self, "norm_pair", (m, n))
        if self.rho1 < 0 or self.rho2 < 0:
            raise ValueError("rho1 and rho2 must be nonnegative")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.algorithm is Algorithm.ROTD_EXT and not self.rho1 > 0:
            raise ValueError("RO-TD-EXT needs rho1 > 0")

    @property
    def dual_exponent(self) -> float:
        return self.norm_pair[1]


@dataclass
class PrimalDualState:
    w: np.ndarray
    theta: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    sum_alpha: float = 0.0
    x_weighted_sum: np.ndarray = None
    y_weighted_sum: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        d = len(self.theta)
        if self.x_weighted_sum is None:
            self.x_weighted_sum = np.zeros(2 * d)
        if self.y_weighted_sum is None:
            self.y_weighted_sum = np.zeros(2 * d)

    @classmethod
    def zeros(cls, d: int, theta0=None) -> "PrimalDualState":
        theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
        return cls(np.zeros(d), theta, np.zeros(d), np.zeros(d))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.w, self.theta])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.y1, self.y2])

    def copy(self) -> "PrimalDualState":
        return PrimalDualState(
            self.w.copy(), self.theta.copy(), self.y1.copy(), self.y2.copy(),
            self.sum_alpha, self.x_weighted_sum.copy(), self.y_weighted_sum.copy(), self.t,
        )


@dataclass
class DualExtensionState(PrimalDualState):
    u: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.u is None:
            self.u = np.zeros(2 * len(self.theta))

    @classmethod
    def zeros(cls, d: int, theta0=None) -> "DualExtensionState":
        theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
        return cls(np.zeros(d), theta, np.zeros(d), np.zeros(d))

    def copy(self) -> "DualExtensionState":
        base = PrimalDualState.copy(self)
        return DualExtensionState(**vars(base), u=self.u.copy())


@dataclass
class TraceState:
    e: np.ndarray
    lam: float

    @classmethod
    def zeros(cls, d: int, lam: float) -> "TraceState":
        return cls(np.zeros(d), lam)


# --------------------------------------------------------------------------
# primitives

def soft_threshold(x, rho: float) -> np.ndarray:
    """Entrywise shrinkage ``max(x - rho, 0) - max(-x - rho, 0)``."""
    if rho < 0:
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.maximum(x - rho, 0.0) - np.maximum(-x - rho, 0.0)


def project_ball(y, n: float) -> np.ndarray:
    """Map ``y`` into the unit ``l_n`` ball.

    ``n = inf`` clamps entrywise; finite ``n`` rescales radially by
    ``min(1, 1/||y||_n)`` (the Euclidean projection for ``n = 2``).
    """
    y = np.asarray(y, dtype=float)
    if n == math.inf:
        return np.clip(y, -1.0, 1.0)
    if n not in (1, 2):
        raise ValueError(f"unsupported ball exponent {n!r}")
    norm = np.linalg.norm(y, ord=n)
    if norm > 1.0:
        return y / norm
    return y.copy()


def td_error(sample: Sample, theta, gamma: float, bar: bool = False) -> float:
    nxt = sample.phi_bar_next if bar else sample.phi_next
    return float(sample.reward + gamma * (nxt @ theta) - sample.phi @ theta)


def matfree_yTA(sample: Sample, y1, y2, eta: float, gamma: float) -> np.ndarray:
    """Row vector ``y^T A_t`` from inner products only (O(d))."""
    phi, phin = sample.phi, sample.phi_next
    c1 = y1 @ phi
    w_block = eta * c1 * phi + gamma * (y2 @ phin) * phi
    theta_block = (eta * c1 + y2 @ phi) * (phi - gamma * phin)
    return np.concatenate([w_block, theta_block])


def matfree_Axb(sample: Sample, w, theta, eta: float, gamma: float) -> np.ndarray:
    """``A_t x - b_t`` from the TD error (O(d))."""
    delta = td_error(sample, theta, gamma)
    pw = sample.phi @ w
    return np.concatenate([
        -eta * (delta * sample.phi - pw * sample.phi),
        gamma * pw * sample.phi_next - delta * sample.phi,
    ])


def matfree_yTA_trace(sample: Sample, e, y1, y2, eta: float, gamma: float, lam: float) -> np.ndarray:
    phi, phib = sample.phi, sample.phi_bar_next
    c1 = y1 @ phi
    w_block = eta * c1 * phi + gamma * (1.0 - lam) * (y2 @ phib) * e
    theta_block = (eta * (y1 @ e) + y2 @ e) * (phi - gamma * phib)
    return np.concatenate([w_block, theta_block])


def matfree_Axb_trace(sample: Sample, e, w, theta, eta: float, gamma: float, lam: float) -> np.ndarray:
    delta = td_error(sample, theta, gamma, bar=True)
    pw = sample.phi @ w
    return np.concatenate([
        -eta * (delta * e - pw * sample.phi),
        gamma * (1.0 - lam) * (e @ w) * sample.phi_bar_next - delta * e,
    ])


# --------------------------------------------------------------------------
# per-sample updates

def _accumulate(state: PrimalDualState, alpha: float) -> None:
    state.t += 1
    state.sum_alpha += alpha
    state.x_weighted_sum = state.x_weighted_sum + alpha * state.x
    state.y_weighted_sum = state.y_weighted_sum + alpha * state.y


def _check_finite(state: PrimalDualState) -> None:
    if not (np.all(np.isfinite(state.theta)) and np.all(np.isfinite(state.w))
            and np.all(np.isfinite(state.y1)) and np.all(np.isfinite(state.y2))):
        raise DivergenceError(state.t, state)


def td_step(state: PrimalDualState, sample: Sample, alpha: float, gamma: float) -> PrimalDualState:
    out = state.copy()
    delta = td_error(sample, state.theta, gamma)
    out.theta = state.theta + alpha * (delta * sample.phi)
    _accumulate(out, alpha)
    _check_finite(out)
    return out


def tdc_step(state: PrimalDualState, sample: Sample, alpha: float, eta: float, gamma: float) -> PrimalDualState:
    out = state.copy()
    delta = td_error(sample, state.theta, gamma)
    pw = sample.phi @ state.w
    # same operation order as gq_step, so GQ(0) reproduces TDC bit for bit
    out.theta = state.theta + alpha * (delta * sample.phi - gamma * pw * sample.phi_next)
    out.w = state.w + eta * alpha * (delta * sample.phi - pw * sample.phi)
    _accumulate(out, alpha)
    _check_finite(out)
    return out


def _primal_dual_update(state, yTA, Axb, alpha, config) -> PrimalDualState:
    d = len(state.theta)
    out = state.copy()
    x_half = state.x - alpha * yTA
    y_half = state.y + alpha * Axb
    out.w = soft_threshold(x_half[:d], alpha * config.rho2)
    out.theta = soft_threshold(x_half[d:], alpha * config.rho1)
    y = project_ball(y_half, config.dual_exponent)
    out.y1, out.y2 = y[:d], y[d:]
    _accumulate(out, alpha)
    _check_finite(out)
    return out


def _alpha_for(state, config, alpha):
    return config.alpha(state.t + 1) if alpha is None else alpha


def rotd_step(state: PrimalDualState, sample: Sample, config: SolverConfig, alpha: float | None = None) -> PrimalDualState:
    """One regularized primal-dual iteration (prox on x, projection on y)."""
    alpha = _alpha_for(state, config, alpha)
    yTA = matfree_yTA(sample, state.y1, state.y2, config.eta, config.gamma)
    Axb = matfree_Axb(sample, state.w, state.theta, config.eta, config.gamma)
    return _primal_dual_update(state, yTA, Axb, alpha, config)


def average_iterates(state: PrimalDualState) -> tuple[np.ndarray, np.ndarray]:
    """Stepsize-weighted means of the primal and dual iterates."""
    if state.t < 1 or state.sum_alpha <= 0:
        raise ValueError("no iterations have been taken yet")
    return state.x_weighted_sum / state.sum_alpha, state.y_weighted_sum / state.sum_alpha


def gq_trace_update(trace: TraceState, sample: Sample, gamma: float, reset: bool = False) -> TraceState:
    """Accumulating trace ``e <- gamma * lambda * e + phi`` (``e <- phi`` on reset)."""
    if reset:
        return TraceState(np.array(sample.phi, dtype=float), trace.lam)
    return TraceState(gamma * trace.lam * trace.e + sample.phi, trace.lam)


def gq_step(state: PrimalDualState, trace: TraceState, sample: Sample, alpha: float, eta: float,
            gamma: float, lam: float) -> PrimalDualState:
    """GQ(lambda) update with an already-updated trace ``trace.e``."""
    out = state.copy()
    e = trace.e
    delta = td_error(sample, state.theta, gamma, bar=True)
    out.theta = state.theta + alpha * (delta * e - gamma * (1.0 - lam) * (state.w @ e) * sample.phi_bar_next)
    out.w = state.w + eta * alpha * (delta * e - (state.w @ sample.phi) * sample.phi)
    _accumulate(out, alpha)
    _check_finite(out)
    return out


def rogq_step(state: PrimalDualState, trace: TraceState, sample: Sample, config: SolverConfig,
              alpha: float | None = None) -> PrimalDualState:
    alpha = _alpha_for(state, config, alpha)
    yTA = matfree_yTA_trace(sample, trace.e, state.y1, state.y2, config.eta, config.gamma, trace.lam)
    Axb = matfree_Axb_trace(sample, trace.e, state.w, state.theta, config.eta, config.gamma, trace.lam)
    return _primal_dual_update(state, yTA, Axb, alpha, config)


def rotd_ext_step(state: DualExtensionState, sample: Sample, alpha: float, rho: float,
                  eta: float = 1.0, gamma: float = 0.0) -> DualExtensionState:
    """Prox-free iteration for ``min 1/2 ||Ax - b||^2 + rho ||x||_1`` on one sample."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    ATy = matfree_yTA(sample, state.y1, state.y2, eta, gamma)
    Axb = matfree_Axb(sample, state.w, state.theta, eta, gamma)
    return _ext_update(state, ATy, Axb, alpha, rho)


def rotd_ext_step_dense(state: DualExtensionState, A_t, b_t, alpha: float, rho: float) -> DualExtensionState:
    """Same iteration as :func:`rotd_ext_step` for an explicit ``(A_t, b_t)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    A_t = np.asarray(A_t, dtype=float)
    return _ext_update(state, A_t.T @ state.y, A_t @ state.x - b_t, alpha, rho)


def _ext_update(state, ATy, Axb, alpha, rho):
    d = len(state.theta)
    out = state.copy()
    x, y, u = state.x, state.y, state.u
    x_new = x - alpha * rho * (u + ATy)
    y_new = y + (alpha / rho) * (Axb - rho * y)
    out.u = project_ball(u + (alpha / rho) * x, math.inf)
    out.w, out.theta = x_new[:d], x_new[d:]
    out.y1, out.y2 = y_new[:d], y_new[d:]
    _accumulate(out, alpha)
    _check_finite(out)
    return out


# --------------------------------------------------------------------------
# batch runner

@dataclass
class SolverRun:
    """Outcome of :func:`run_solver`.

    Record arrays hold one row per recorded iteration (``iterations``, which
    always starts at 0 and ends at the last completed iteration).
    ``xbar``/``ybar`` rows at iteration 0 are the initial iterates.
    """

    algorithm: Algorithm
    state: PrimalDualState
    iterations: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xbar: np.ndarray
    ybar: np.ndarray
    delta: np.ndarray
    diverged_at: int | None = None
    backend: str = ""

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def estimate(self, k: int = -1) -> np.ndarray:
        """Reported parameter ``[w; theta]`` at record ``k``: the averaged iterate
        for primal-dual solvers, the current iterate otherwise."""
        return self.xbar[k] if self.algorithm.primal_dual else self.x[k]


def record_iterations(n: int, stride: int) -> np.ndarray:
    """Iterations 0, stride, 2*stride, ..., always including ``n``."""
    stride = max(1, int(stride))
    its = np.arange(0, n + 1, stride, dtype=np.int64)
    if its[-1] != n:
        its = np.append(its, n)
    return its


def run_solver(batch: EpisodeBatch, config: SolverConfig, init: PrimalDualState | None = None,
               record_every: int | None = None, backend: str | None = None) -> SolverRun:
    """Run ``config.algorithm`` over every sample of ``batch`` in order.

    Divergence stops the run early; the returned run then has
    ``diverged_at`` set and records up to the last finite iteration.
    """
    n, d = len(batch), batch.d
    algo = config.algorithm
    if init is None:
        init = DualExtensionState.zeros(d) if algo is Algorithm.ROTD_EXT else PrimalDualState.zeros(d)
    if record_every is None:
        record_every = max(1, n // 500)
    its = record_iterations(n, record_every)
    kern = _backend.get(backend)

    w, theta = init.w.astype(float).copy(), init.theta.astype(float).copy()
    y1, y2 = init.y1.astype(float).copy(), init.y2.astype(float).copy()
    u = getattr(init, "u", None)
    u = np.zeros(2 * d) if u is None else u.astype(float).copy()
    sums = np.concatenate([init.x_weighted_sum, init.y_weighted_sum]).astype(float)
    sum_alpha = np.array([init.sum_alpha], dtype=float)
    out_x = np.zeros((len(its), 2 * d))
    out_y = np.zeros((len(its), 2 * d))
    out_xbar = np.zeros((len(its), 2 * d))
    out_ybar = np.zeros((len(its), 2 * d))
    out_delta = np.full(len(its), np.nan)
    alphas = config.alpha.values(n + init.t)[init.t:]
    n_dual = {2.0: 2, 1.0: 1, math.inf: 0}[config.dual_exponent]

    last = kern.run(
        ALGORITHM_CODES[algo],
        np.ascontiguousarray(batch.phi, dtype=float),
        np.ascontiguousarray(batch.reward, dtype=float),
        np.ascontiguousarray(batch.phi_next, dtype=float),
        np.ascontiguousarray(batch.phi_bar_next, dtype=float),
        batch.episode_starts().astype(np.uint8),
        np.ascontiguousarray(alphas, dtype=float),
        float(config.eta), float(config.gamma), float(config.lam),
        float(config.rho1), float(config.rho2), n_dual,
        w, theta, y1, y2, u, sums, sum_alpha,
        its, out_x, out_y, out_xbar, out_ybar, out_delta,
    )
    diverged_at = None if last == n else last + 1
    keep = its <= last
    cls = DualExtensionState if algo is Algorithm.ROTD_EXT else PrimalDualState
    state = cls(w, theta, y1, y2, float(sum_alpha[0]), sums[: 2 * d].copy(), sums[2 * d:].copy(), init.t + last)
    if algo is Algorithm.ROTD_EXT:
        state.u = u
    if diverged_at is not None and keep.sum() == 0:
        keep[0] = True
    return SolverRun(
        algo, state, its[keep] + init.t, out_x[keep], out_y[keep], out_xbar[keep], out_ybar[keep],
        out_delta[keep], diverged_at=None if diverged_at is None else diverged_at + init.t,
        backend=kern.NAME,
    )


def greedy_phi_bar(features, theta, next_state, n_actions: int) -> np.ndarray:
    """Feature vector of the greedy next action under ``theta`` (control use)."""
    vals = [features((next_state, a)) @ theta for a in range(n_actions)]
    return features((next_state, int(np.argmax(vals))))
