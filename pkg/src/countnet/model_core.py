"""Deterministic model math: softplus, the bilinear pmf and interaction probabilities.

Node representations are stored column-wise: ``z[:, a]`` is the latent
vector of node ``a`` and the unnormalized mass of the ordered pair ``(i, j)``
is ``softplus(z[:, i] @ w @ z[:, j])``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

SOFTPLUS_SWITCH = 30.0


class PriorKind(str, Enum):
    CRP = "crp"
    GAUSSIAN = "gaussian"


def softplus(x):
    """log(1 + exp(x)), overflow safe.

    Works on scalars and arrays. Scalars must be finite.
    """
    if np.ndim(x) == 0:
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"softplus needs a finite argument, got {x!r}")
        if x > SOFTPLUS_SWITCH:
            return x + math.log1p(math.exp(-x))
        return math.log1p(math.exp(x))
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class CountMatrix:
    """Sparse n x n matrix of interaction counts.

    ``entries`` maps a cell to its count, ``mask`` holds the cells that are
    observed. For symmetric data every cell is stored in canonical
    ``(min, max)`` form and ``count(j, i)`` mirrors ``count(i, j)``.
    """

    n_nodes: int
    entries: dict = field(default_factory=dict)
    mask: frozenset = frozenset()
    symmetric: bool = False
    labels: Optional[list] = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        self.mask = frozenset(self.mask)
        if self.labels is not None and len(self.labels) != self.n_nodes:
            raise ValueError("one label per node required")
        for cell, c in self.entries.items():
            i, j = cell
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"cell {cell} out of range")
            if not c >= 0:
                raise ValueError(f"negative count {c} at {cell}")
            if cell not in self.mask:
                raise ValueError(f"cell {cell} has an entry but is not observed")
            if self.symmetric and i > j:
                raise ValueError(f"symmetric cell {cell} is not canonical")

    def canonical(self, i: int, j: int) -> tuple:
        if self.symmetric and i > j:
            return (j, i)
        return (i, j)

    def count(self, i: int, j: int) -> float:
        return self.entries.get(self.canonical(i, j), 0)

    @property
    def total(self) -> float:
        return float(sum(self.entries.values()))

    def nonzero_cells(self) -> list:
        return sorted(c for c, v in self.entries.items() if v > 0)

    def dense(self) -> np.ndarray:
        """Counts as an n x n array; symmetric data is stored upper-triangular."""
        out = np.zeros((self.n_nodes, self.n_nodes))
        for (i, j), c in self.entries.items():
            out[i, j] = c
        return out

    def node_totals(self) -> np.ndarray:
        tot = np.zeros(self.n_nodes)
        for (i, j), c in self.entries.items():
            tot[i] += c
            if j != i:
                tot[j] += c
        return tot

    def with_counts(self, entries: dict) -> "CountMatrix":
        return CountMatrix(self.n_nodes, dict(entries), self.mask, self.symmetric, self.labels)

    def subset(self, nodes: Sequence[int]) -> "CountMatrix":
        """Restrict to ``nodes``, reindexed in the given order."""
        pos = {a: k for k, a in enumerate(nodes)}

        def remap(cell):
            i, j = pos[cell[0]], pos[cell[1]]
            if self.symmetric and i > j:
                i, j = j, i
            return (i, j)

        mask = {remap(c) for c in self.mask if c[0] in pos and c[1] in pos}
        entries = {remap(c): v for c, v in self.entries.items() if c[0] in pos and c[1] in pos}
        labels = [self.labels[a] for a in nodes] if self.labels is not None else None
        return CountMatrix(len(nodes), entries, mask, self.symmetric, labels)


def universe_cells(n_nodes: int, symmetric: bool) -> tuple:
    """Row and column index arrays of every cell that carries probability mass."""
    if symmetric:
        return np.triu_indices(n_nodes)
    rows, cols = np.indices((n_nodes, n_nodes))
    return rows.ravel(), cols.ravel()


def universe_weights(n_nodes: int, symmetric: bool) -> np.ndarray:
    """0/1 matrix selecting the universe cells."""
    if symmetric:
        return np.triu(np.ones((n_nodes, n_nodes)))
    return np.ones((n_nodes, n_nodes))


@dataclass
class LatentState:
    """Node representations ``z`` (d x n) and weights ``w`` (d x d)."""

    z: np.ndarray
    w: np.ndarray
    prior_kind: PriorKind = PriorKind.GAUSSIAN
    crp_assignments: Optional[np.ndarray] = None

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        self.prior_kind = PriorKind(self.prior_kind)
        d, n = self.z.shape
        if d < 1 or n < 1:
            raise ValueError("z must be at least 1 x 1")
        if self.w.shape != (d, d):
            raise ValueError(f"w has shape {self.w.shape}, expected {(d, d)}")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.w))):
            raise ValueError("latent state has non-finite entries")
        if self.prior_kind is PriorKind.CRP:
            if self.crp_assignments is None:
                raise ValueError("CRP state needs class assignments")
            self.crp_assignments = np.asarray(self.crp_assignments, dtype=int)
            expected = one_hot(self.crp_assignments, d)
            if not np.array_equal(expected, self.z):
                raise ValueError("z is not the 1-of-K coding of the assignments")
        elif self.crp_assignments is not None:
            raise ValueError("Gaussian state must not carry class assignments")

    @property
    def d(self) -> int:
        return self.z.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[1]

    @property
    def dims(self) -> int:
        return self.d

    @classmethod
    def from_assignments(cls, assignments, w) -> "LatentState":
        assignments = np.asarray(assignments, dtype=int)
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return cls(one_hot(assignments, w.shape[0]), w, PriorKind.CRP, assignments)

    def copy(self) -> "LatentState":
        a = None if self.crp_assignments is None else self.crp_assignments.copy()
        return LatentState(self.z.copy(), self.w.copy(), self.prior_kind, a)

    def bilinear(self) -> np.ndarray:
        """The n x n matrix of Z_i^T W Z_j."""
        return self.z.T @ self.w @ self.z


def one_hot(assignments, n_classes: int) -> np.ndarray:
    assignments = np.asarray(assignments, dtype=int)
    if assignments.size and (assignments.min() < 0 or assignments.max() >= n_classes):
        raise ValueError("class index out of range")
    if len(np.unique(assignments)) != n_classes:
        raise ValueError("every class must be occupied")
    z = np.zeros((n_classes, assignments.size))
    z[assignments, np.arange(assignments.size)] = 1.0
    return z


@dataclass
class Hyperparams:
    alpha_crp: float = 1.0
    sigma_z_sq: float = 1.0
    sigma_w_sq: float = 1.0
    alpha_dcm: float = 1.0
    d_gaussian: int = 2
    mc_new_class_samples: int = 10

    def __post_init__(self):
        for name in ("alpha_crp", "sigma_z_sq", "sigma_w_sq", "alpha_dcm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.d_gaussian < 1:
            raise ValueError("d_gaussian must be >= 1")
        if self.mc_new_class_samples < 1:
            raise ValueError("mc_new_class_samples must be >= 1")


def _check_cells(state: LatentState, rows, cols):
    n = state.n
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise IndexError(f"cell index out of range for {n} nodes")


def _as_arrays(cells: Iterable) -> tuple:
    arr = np.asarray(list(cells), dtype=int).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def pmf_cell(state: LatentState, i: int, j: int) -> float:
    if not (0 <= i < state.n and 0 <= j < state.n):
        raise IndexError(f"cell ({i}, {j}) out of range for {state.n} nodes")
    return softplus(float(state.z[:, i] @ state.w @ state.z[:, j]))


def pmf_matrix(state: LatentState, cells) -> np.ndarray:
    """Element-wise pmf over ``cells`` (a sequence of pairs), in input order."""
    rows, cols = _as_arrays(cells)
    _check_cells(state, rows, cols)
    left = state.w.T @ state.z[:, rows]
    scores = np.einsum("kc,kc->c", left, state.z[:, cols])
    return softplus(scores)


def interaction_prob(state: LatentState, i: int, j: int, cells) -> float:
    """Unsmoothed probability of cell (i, j) normalized over ``cells``."""
    cells = [tuple(c) for c in cells]
    if not cells:
        raise ValueError("cells must be non-empty")
    try:
        k = cells.index((i, j))
    except ValueError:
        raise ValueError(f"cell ({i}, {j}) is not among the normalization cells") from None
    mass = pmf_matrix(state, cells)
    return float(mass[k] / mass.sum())
