"""Basis function families.

Every map is callable on a single state and returns a dense vector of
length ``d``.  Finite-state maps (tabular, inverted, dependent) are backed
by an explicit ``n_states x d`` table; continuous maps (RBF grid, Fourier)
evaluate on the fly.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

KINDS = ("tabular", "inverted", "dependent", "rbf-grid", "fourier", "action-stacked")


class FeatureMap:
    """Maps a state to a feature vector of length ``d``."""

    kind: str = ""

    def __init__(self, d: int):
        if d < 1:
            raise ValueError(f"feature dimension must be positive, got {d}")
        self.d = int(d)

    def __call__(self, state) -> np.ndarray:
        raise NotImplementedError

    def batch(self, states) -> np.ndarray:
        """Stack feature vectors for a sequence of states into an ``(n, d)`` array."""
        states = list(states)
        out = np.empty((len(states), self.d))
        for i, s in enumerate(states):
            out[i] = self(s)
        return out

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, d={self.d})"


class TableFeatures(FeatureMap):
    """Feature map over integer states given by an explicit table.

    Rows listed in ``terminal`` are all-zero (absorbing states carry no value).
    """

    def __init__(self, table: np.ndarray, kind: str, terminal: Sequence[int] = ()):
        table = np.array(table, dtype=float)
        if table.ndim != 2:
            raise ValueError("feature table must be two-dimensional")
        super().__init__(table.shape[1])
        table.setflags(write=False)
        self.table = table
        self.kind = kind
        self.terminal = tuple(int(s) for s in terminal)
        self.n_states = table.shape[0]

    def __call__(self, state) -> np.ndarray:
        s = int(state)
        if not 0 <= s < self.n_states:
            raise IndexError(f"state {s} outside 0..{self.n_states - 1}")
        return self.table[s].copy()

    def batch(self, states) -> np.ndarray:
        return self.table[np.asarray(list(states), dtype=int)].copy()

    def matrix(self) -> np.ndarray:
        return self.table.copy()


def tabular_features(n_states: int) -> TableFeatures:
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    return TableFeatures(np.eye(n_states), "tabular")


def inverted_features(n_states: int) -> TableFeatures:
    """Complement of the one-hot code, scaled to unit length."""
    if n_states < 2:
        raise ValueError("inverted features need at least 2 states")
    table = (1.0 - np.eye(n_states)) / np.sqrt(n_states - 1)
    return TableFeatures(table, "inverted")


def dependent_features(n_states: int) -> TableFeatures:
    """Overlapping ramp patterns with ``(n_states + 1) / 2`` columns.

    For 5 states the unnormalized rows are (1,0,0), (1,1,0), (1,1,1),
    (0,1,1), (0,0,1): the first half of the states switch columns on from
    the left, the second half switch them off.
    """
    if n_states < 3 or n_states % 2 == 0:
        raise ValueError(f"dependent features need an odd n_states >= 3, got {n_states}")
    d = (n_states + 1) // 2
    table = np.zeros((n_states, d))
    for s in range(n_states):
        if s < d:
            table[s, : s + 1] = 1.0
        else:
            table[s, s - d + 1 :] = 1.0
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    return TableFeatures(table, "dependent")


def pad_terminal_states(base: TableFeatures, n_before: int = 1, n_after: int = 1) -> TableFeatures:
    """Embed ``base`` in a larger state space whose extra end states map to zero."""
    n = base.n_states + n_before + n_after
    table = np.zeros((n, base.d))
    table[n_before : n_before + base.n_states] = base.table
    terminal = list(range(n_before)) + list(range(n_before + base.n_states, n))
    return TableFeatures(table, base.kind, terminal=terminal)


def _check_bounds(bounds) -> np.ndarray:
    b = np.array(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must be a sequence of (low, high) pairs")
    if np.any(b[:, 1] - b[:, 0] <= 0):
        raise ValueError(f"degenerate bounds {b.tolist()}")
    return b


class RBFGridFeatures(FeatureMap):
    """Gaussian bumps on a union of square grids over a 2-D box.

    For a ``g x g`` grid the centres are ``linspace(low, high, g)`` in each
    dimension and the per-dimension width is the grid spacing,
    ``(high - low) / (g - 1)``; a 1x1 grid sits in the middle with width equal
    to the interval length.
    """

    kind = "rbf-grid"

    def __init__(self, bounds, grid_sizes: Sequence[int], include_constant: bool = True):
        b = _check_bounds(bounds)
        if b.shape[0] != 2:
            raise ValueError("RBF grids are defined over two-dimensional states")
        grid_sizes = [int(g) for g in grid_sizes]
        if not grid_sizes:
            raise ValueError("grid_sizes must be nonempty")
        if any(g < 1 for g in grid_sizes):
            raise ValueError("grid sizes must be positive")
        self.low = b[:, 0]
        self.high = b[:, 1]
        self.grid_sizes = tuple(grid_sizes)
        self.include_constant = bool(include_constant)

        centers, widths, blocks = [], [], []
        start = 0
        for g in grid_sizes:
            ticks = np.linspace(0.0, 1.0, g) if g > 1 else np.array([0.5])
            width = 1.0 / (g - 1) if g > 1 else 1.0
            grid = np.array(list(itertools.product(ticks, ticks)))
            centers.append(grid)
            widths.append(np.full(len(grid), width))
            blocks.append(slice(start, start + len(grid)))
            start += len(grid)
        # centres and widths live in the unit box
        self.centers = np.vstack(centers)
        self.widths = np.concatenate(widths)
        self.blocks = tuple(blocks)
        super().__init__(start + int(self.include_constant))

    def __call__(self, state) -> np.ndarray:
        u = (np.asarray(state, dtype=float) - self.low) / (self.high - self.low)
        sq = (((u - self.centers) / self.widths[:, None]) ** 2).sum(axis=1)
        out = np.exp(-0.5 * sq)
        if self.include_constant:
            out = np.append(out, 1.0)
        return out

    def rbf_center(self, index: int) -> np.ndarray:
        """Centre of RBF ``index`` in state coordinates."""
        return self.low + self.centers[index] * (self.high - self.low)


def rbf_grid_features(bounds, grid_sizes, include_constant=True) -> RBFGridFeatures:
    return RBFGridFeatures(bounds, grid_sizes, include_constant)


class FourierFeatures(FeatureMap):
    """Full Fourier cosine basis of a given order over a box.

    States outside the box are clamped to its boundary.
    """

    kind = "fourier"

    def __init__(self, state_dim: int, order: int, bounds):
        if state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if order < 0:
            raise ValueError("order must be >= 0")
        b = _check_bounds(bounds)
        if b.shape[0] != state_dim:
            raise ValueError(f"expected {state_dim} bound pairs, got {b.shape[0]}")
        self.state_dim = state_dim
        self.order = order
        self.low = b[:, 0]
        self.high = b[:, 1]
        self.coefficients = np.array(
            list(itertools.product(range(order + 1), repeat=state_dim)), dtype=float
        )
        super().__init__(len(self.coefficients))

    def __call__(self, state) -> np.ndarray:
        s = np.clip(np.asarray(state, dtype=float), self.low, self.high)
        u = (s - self.low) / (self.high - self.low)
        return np.cos(np.pi * (self.coefficients @ u))


def fourier_features(state_dim: int, order: int, bounds) -> FourierFeatures:
    return FourierFeatures(state_dim, order, bounds)


class ActionStackedFeatures(FeatureMap):
    """State-action features: ``base(s)`` written into block ``a`` of ``n_actions``."""

    kind = "action-stacked"

    def __init__(self, base: FeatureMap, n_actions: int):
        if n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        super().__init__(base.d * n_actions)
        self.base = base
        self.n_actions = n_actions

    def __call__(self, state_action) -> np.ndarray:
        state, action = state_action
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise IndexError(f"action {action} outside 0..{self.n_actions - 1}")
        out = np.zeros(self.d)
        k = self.base.d
        out[action * k : (action + 1) * k] = self.base(state)
        return out


def stack_action_features(base: FeatureMap, n_actions: int) -> ActionStackedFeatures:
    return ActionStackedFeatures(base, n_actions)
