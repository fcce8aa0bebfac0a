"""CRP prior over class assignments and diagonal Gaussian priors on Z and W."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class CrpState:
    assignments: np.ndarray
    class_sizes: np.ndarray
    concentration: float

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=int)
        self.class_sizes = np.asarray(self.class_sizes, dtype=int)
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        if np.any(self.class_sizes <= 0):
            raise ValueError("empty classes are not allowed")
        counts = np.bincount(self.assignments, minlength=len(self.class_sizes))
        if len(counts) != len(self.class_sizes) or not np.array_equal(counts, self.class_sizes):
            raise ValueError("class sizes disagree with the assignments")

    @classmethod
    def from_assignments(cls, assignments, concentration: float) -> "CrpState":
        assignments = canonical_labels(assignments)
        return cls(assignments, np.bincount(assignments), concentration)

    @property
    def n(self) -> int:
        return len(self.assignments)


def canonical_labels(assignments) -> np.ndarray:
    """Relabel classes by order of first appearance."""
    assignments = np.asarray(assignments, dtype=int)
    mapping = {}
    out = np.empty_like(assignments)
    for k, c in enumerate(assignments):
        out[k] = mapping.setdefault(int(c), len(mapping))
    return out


def crp_seating_probs(state: CrpState, excluding: int) -> np.ndarray:
    """Seating probabilities of node ``excluding`` given everyone else.

    Returns one entry per class still occupied after removal (in label
    order) followed by the new-table probability.
    """
    if not 0 <= excluding < state.n:
        raise IndexError(f"node {excluding} out of range")
    sizes = state.class_sizes.astype(float).copy()
    sizes[state.assignments[excluding]] -= 1
    sizes = sizes[sizes > 0]
    alpha = state.concentration
    return np.append(sizes, alpha) / (state.n - 1 + alpha)


def crp_log_prob(state: CrpState) -> float:
    """Exchangeable partition probability K log a + sum log Gamma(m_k) - sum log(t + a)."""
    alpha = state.concentration
    sizes = state.class_sizes
    return float(
        len(sizes) * math.log(alpha)
        + gammaln(sizes).sum()
        - np.log(np.arange(state.n) + alpha).sum()
    )


def _gaussian_log_density(x, sigma_sq: float) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries")
    if not sigma_sq > 0:
        raise ValueError("variance must be positive")
    return float(-0.5 * x.size * (LOG_2PI + math.log(sigma_sq)) - x @ x / (2.0 * sigma_sq))


def gaussian_log_prior_z(z_column, sigma_z_sq: float) -> float:
    return _gaussian_log_density(z_column, sigma_z_sq)


def gaussian_log_prior_w(w, sigma_w_sq: float) -> float:
    return _gaussian_log_density(w, sigma_w_sq)
