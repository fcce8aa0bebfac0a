"""Synthetic count matrices drawn from the Gaussian latent model."""
from __future__ import annotations

import math

import numpy as np

from .model_core import CountMatrix, LatentState, softplus, universe_cells


def generate_counts(n_nodes: int, d: int, n_draws: int, seed: int, sigma_z_sq: float = 1.0,
                    sigma_w_sq: float = 1.0, symmetric: bool = False, compound: bool = True):
    """Draw Z and W from their priors, then ``n_draws`` interactions.

    With ``compound`` the cell probabilities are first drawn from a
    Dirichlet with parameters pmf(i, j); otherwise the normalized pmf is
    used directly. Returns ``(CountMatrix, LatentState)``; the mask holds the
    nonzero cells, as a loaded edge list would.
    """
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, math.sqrt(sigma_z_sq), size=(d, n_nodes))
    w = rng.normal(0.0, math.sqrt(sigma_w_sq), size=(d, d))
    state = LatentState(z, w)
    rows, cols = universe_cells(n_nodes, symmetric)
    mass = softplus(state.bilinear()[rows, cols])
    if compound:
        # gamma draws can underflow to zero for tiny parameters
        g = rng.gamma(mass)
        probs = g / g.sum()
    else:
        probs = mass / mass.sum()
    draws = rng.multinomial(n_draws, probs)
    entries = {(int(i), int(j)): int(c) for i, j, c in zip(rows, cols, draws) if c > 0}
    labels = [f"n{a}" for a in range(n_nodes)]
    return CountMatrix(n_nodes, entries, frozenset(entries), symmetric, labels), state


# (nodes, interactions) of the two benchmark count matrices the model is usually run on
MATCHED_SCALES = {"coauthor": (234, 528), "adjective_noun": (210, 22582)}


def scale_fixture(name: str, seed: int, d: int = 2):
    """Synthetic counts with the node and interaction totals of a benchmark."""
    try:
        n_nodes, n_draws = MATCHED_SCALES[name]
    except KeyError:
        raise ValueError(f"unknown scale {name!r}; choose from {sorted(MATCHED_SCALES)}") from None
    return generate_counts(n_nodes, d, n_draws, seed)
