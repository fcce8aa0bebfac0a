"""Dirichlet-compound-Multinomial likelihood of a count matrix.

Each cell of the universe receives the Dirichlet parameter
``pmf(i, j) + alpha_dcm / K`` where ``K`` is the number of seen cells. The
log-density omits the multinomial coefficient, which does not depend on
the model parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .model_core import (
    CountMatrix,
    LatentState,
    pmf_matrix,
    softplus,
    universe_cells,
    universe_weights,
)


@dataclass
class DcmParams:
    alphas: np.ndarray
    total_alpha: float

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        if np.any(~(self.alphas > 0)):
            raise ValueError("all Dirichlet parameters must be positive")

    @classmethod
    def from_alphas(cls, alphas) -> "DcmParams":
        alphas = np.asarray(alphas, dtype=float)
        return cls(alphas, float(alphas.sum()))


@dataclass(frozen=True)
class SmoothingScheme:
    alpha_dcm: float
    k_seen: int

    def __post_init__(self):
        if not self.alpha_dcm > 0:
            raise ValueError("alpha_dcm must be positive")
        if self.k_seen < 1:
            raise ValueError("k_seen must be >= 1")

    @property
    def per_cell(self) -> float:
        return self.alpha_dcm / self.k_seen

    @classmethod
    def for_data(cls, data: CountMatrix, alpha_dcm: float) -> "SmoothingScheme":
        # An all-zero matrix still needs a well-defined per-cell prior.
        return cls(alpha_dcm, max(1, len(data.nonzero_cells())))


def dcm_alphas(state: LatentState, smoothing: SmoothingScheme, cells) -> DcmParams:
    cells = list(cells)
    if not cells:
        raise ValueError("cells must be non-empty")
    return DcmParams.from_alphas(pmf_matrix(state, cells) + smoothing.per_cell)


def dcm_log_prob(counts, params: DcmParams) -> float:
    """log Gamma(A) - log Gamma(N + A) + sum log Gamma(n + a) - log Gamma(a)."""
    counts = np.asarray(counts, dtype=float)
    alphas = params.alphas
    if counts.shape != alphas.shape:
        raise ValueError(f"{counts.size} counts for {alphas.size} Dirichlet parameters")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    n_total = counts.sum()
    if n_total == 0:
        return 0.0
    seen = counts > 0
    a = alphas[seen]
    per_cell = np.sum(gammaln(counts[seen] + a) - gammaln(a))
    A = params.total_alpha
    return float(gammaln(A) - gammaln(n_total + A) + per_cell)


def data_log_likelihood(data: CountMatrix, state: LatentState, smoothing: SmoothingScheme) -> float:
    """DCM log-likelihood of the observed counts, normalized over the full cell universe.

    Computed from scratch; the sampler uses :class:`LikelihoodCache` instead.
    """
    if state.n != data.n_nodes:
        raise ValueError(f"state has {state.n} nodes, data has {data.n_nodes}")
    if not data.mask:
        return 0.0
    rows, cols = universe_cells(data.n_nodes, data.symmetric)
    params = dcm_alphas(state, smoothing, zip(rows, cols))
    dense = data.dense()
    return dcm_log_prob(dense[rows, cols], params)


def predictive_matrix(samples, smoothing: SmoothingScheme, symmetric: bool,
                      counts: Optional[np.ndarray] = None) -> np.ndarray:
    """Posterior-predictive probability of every cell, averaged over samples.

    Without ``counts`` each sample contributes alpha_ij / A. Given the
    training counts (dense, universe layout) it contributes the Dirichlet
    posterior mean (alpha_ij + n_ij) / (A + N) instead. Symmetric results
    are mirrored into the lower triangle; the universe sums to one.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    n = _state(samples[0]).n
    weights = universe_weights(n, symmetric)
    extra = np.zeros((n, n)) if counts is None else np.asarray(counts, dtype=float) * weights
    acc = np.zeros((n, n))
    for s in samples:
        alpha = (softplus(_state(s).bilinear()) + smoothing.per_cell) * weights + extra
        acc += alpha / alpha.sum()
    acc /= len(samples)
    if symmetric:
        acc = np.triu(acc) + np.triu(acc, 1).T
    return acc


def predictive_prob(samples, smoothing: SmoothingScheme, i: int, j: int, universe,
                    counts=None) -> float:
    """Mean over samples of alpha_ij / A with A summed over ``universe``.

    ``counts``, if given, holds one training count per universe cell and
    turns each term into (alpha_ij + n_ij) / (A + N).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    universe = [tuple(c) for c in universe]
    try:
        k = universe.index((i, j))
    except ValueError:
        raise ValueError(f"cell ({i}, {j}) is not in the universe") from None
    extra = np.zeros(len(universe)) if counts is None else np.asarray(counts, dtype=float)
    if extra.shape != (len(universe),):
        raise ValueError("need one count per universe cell")
    probs = []
    for s in samples:
        alphas = dcm_alphas(_state(s), smoothing, universe).alphas + extra
        probs.append(alphas[k] / alphas.sum())
    return float(np.mean(probs))


def _state(sample) -> LatentState:
    return sample if isinstance(sample, LatentState) else sample.state


class LikelihoodCache:
    """Incrementally updated data log-likelihood for the MCMC sweeps.

    Holds the bilinear scores ``S = Z^T W Z``, their softplus, the summed
    universe mass and the per-cell log-Gamma terms of the counted cells, so
    that moving a single node only costs O(n) work.
    """

    def __init__(self, data: CountMatrix, scores: np.ndarray, smoothing: SmoothingScheme):
        n = data.n_nodes
        if scores.shape != (n, n):
            raise ValueError("score matrix does not match the data")
        self.n = n
        self.s = smoothing.per_cell
        self.weights = universe_weights(n, data.symmetric)
        self.n_universe = float(self.weights.sum())

        cells = data.nonzero_cells()
        self.rows = np.array([c[0] for c in cells], dtype=int)
        self.cols = np.array([c[1] for c in cells], dtype=int)
        self.counts = np.array([data.entries[c] for c in cells], dtype=float)
        self.n_total = float(self.counts.sum())
        # cells touching each node, split by whether the node is the row end
        self._touch = []
        for a in range(n):
            idx = np.flatnonzero((self.rows == a) | (self.cols == a))
            is_row = self.rows[idx] == a
            other = np.where(is_row, self.cols[idx], self.rows[idx])
            self._touch.append((idx, is_row, other))
        self.reset(scores)

    def _terms(self, pmf_vals, counts):
        a = pmf_vals + self.s
        return gammaln(counts + a) - gammaln(a)

    def _combine(self, mass: float, term_sum: float) -> float:
        if self.n_total == 0:
            return 0.0
        A = mass + self.s * self.n_universe
        return float(gammaln(A) - gammaln(self.n_total + A) + term_sum)

    def reset(self, scores: np.ndarray):
        self.scores = np.array(scores, dtype=float)
        self.pmf = softplus(self.scores)
        self.mass = float(np.sum(self.weights * self.pmf))
        self.terms = self._terms(self.pmf[self.rows, self.cols], self.counts)
        self.loglik = self._combine(self.mass, float(self.terms.sum()))

    def evaluate(self, scores: np.ndarray) -> float:
        """Log-likelihood for a whole new score matrix, without committing."""
        pmf = softplus(scores)
        mass = float(np.sum(self.weights * pmf))
        terms = self._terms(pmf[self.rows, self.cols], self.counts)
        return self._combine(mass, float(terms.sum()))

    def _node_delta(self, a: int, row: np.ndarray, col: np.ndarray):
        prow = softplus(row)
        pcol = softplus(col)
        pcol_off = pcol.copy()
        pcol_off[a] = self.pmf[a, a]  # (a, a) is counted once, through the row
        dmass = float(self.weights[a] @ (prow - self.pmf[a]) + self.weights[:, a] @ (pcol_off - self.pmf[:, a]))
        idx, is_row, other = self._touch[a]
        new_terms = None
        dterm = 0.0
        if idx.size:
            vals = np.where(is_row, prow[other], pcol[other])
            new_terms = self._terms(vals, self.counts[idx])
            dterm = float(new_terms.sum() - self.terms[idx].sum())
        return prow, pcol, dmass, dterm, new_terms

    def evaluate_node(self, a: int, row: np.ndarray, col: np.ndarray) -> float:
        """Log-likelihood if row ``a`` and column ``a`` of S were replaced.

        ``row[a]`` and ``col[a]`` must agree.
        """
        if self.n_total == 0:
            return 0.0
        _, _, dmass, dterm, _ = self._node_delta(a, row, col)
        return self._combine(self.mass + dmass, float(self.terms.sum()) + dterm)

    def commit_node(self, a: int, row: np.ndarray, col: np.ndarray):
        prow, pcol, dmass, dterm, new_terms = self._node_delta(a, row, col)
        self.scores[a, :] = row
        self.scores[:, a] = col
        self.pmf[a, :] = prow
        self.pmf[:, a] = pcol
        self.mass += dmass
        if new_terms is not None:
            self.terms[self._touch[a][0]] = new_terms
        self.loglik = self._combine(self.mass, float(self.terms.sum()))
        return self.loglik
