"""MCMC over latent node representations and the weight matrix.

Gaussian representations and all weights are updated one coordinate at a
time by slice sampling with linear stepping-out. CRP class assignments are
Gibbs sampled; the likelihood of opening a new class is estimated by
averaging over fresh prior draws of the new class's weights.
"""
from __future__ import annotations

import bisect
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .likelihood import LikelihoodCache, SmoothingScheme
from .model_core import CountMatrix, Hyperparams, LatentState, PriorKind
from .priors import CrpState, crp_log_prob, gaussian_log_prior_w, gaussian_log_prior_z

log = logging.getLogger(__name__)

MIN_SLICE_WIDTH = 1e-300


@dataclass
class SliceConfig:
    initial_width: float = 1.0
    max_step_outs: int = 64
    rng_stream: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if not self.initial_width > 0:
            raise ValueError("initial_width must be positive")
        if self.max_step_outs < 1:
            raise ValueError("max_step_outs must be >= 1")


@dataclass
class InitSchedule:
    batch_size_max: int = 4
    iterations_per_batch: int = 2
    rescale_factor: float = 2.0
    initial_nodes: int = 2

    def __post_init__(self):
        if self.batch_size_max < 1 or self.iterations_per_batch < 1:
            raise ValueError("batch size and iterations per batch must be >= 1")
        if self.initial_nodes < 2:
            raise ValueError("initial_nodes must be >= 2")
        if not self.rescale_factor > 1:
            raise ValueError("rescale_factor must exceed 1")


@dataclass
class ChainConfig:
    n_samples: int = 500
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    init_schedule: InitSchedule = field(default_factory=InitSchedule)
    prior_kind: PriorKind = PriorKind.GAUSSIAN
    initial_width: float = 1.0
    max_step_outs: int = 64

    def __post_init__(self):
        self.prior_kind = PriorKind(self.prior_kind)
        if self.n_samples < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("need n_samples >= 1, thin >= 1 and burn_in >= 0")


@dataclass
class StepDiagnostics:
    train_log_lik: float
    log_posterior: float
    dims: int
    seconds: float


@dataclass
class Sample:
    state: LatentState
    train_log_lik: float
    log_posterior: float
    seconds_elapsed: float
    dims: int


# -- slice sampling ----------------------------------------------------------

def _slice(log_density, x0, fx0, width, max_steps, rng):
    """One stepping-out/shrinkage update; returns the new point and its log-density."""
    log_y = fx0 - rng.exponential()
    left = x0 - width * rng.random()
    right = left + width
    # Neal's m-limited stepping out: J + K = m - 1 steps split at random
    j = math.floor(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and log_density(left) > log_y:
        left -= width
        j -= 1
    while k > 0 and log_density(right) > log_y:
        right += width
        k -= 1
    while True:
        x1 = left + rng.random() * (right - left)
        fx1 = log_density(x1)
        if fx1 > log_y:
            return x1, fx1
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < MIN_SLICE_WIDTH:
            raise RuntimeError("slice interval collapsed; log-density is degenerate")


def slice_sample_1d(log_density: Callable[[float], float], x0: float, cfg: SliceConfig,
                    fx0: Optional[float] = None) -> float:
    if fx0 is None:
        fx0 = log_density(x0)
    if not math.isfinite(fx0):
        raise ValueError(f"log-density at the starting point is {fx0}")
    x, _ = _slice(log_density, x0, fx0, cfg.initial_width, cfg.max_step_outs, cfg.rng_stream)
    return x


# -- coordinate updates ------------------------------------------------------

def _node_scores(z, w, a, za):
    """Row a and column a of Z^T W Z with column a of Z replaced by ``za``."""
    u = za @ w
    row = u @ z
    col = (w @ za) @ z
    row[a] = col[a] = u @ za
    return row, col


def _cache(data, state, smoothing, cache):
    if cache is None:
        return LikelihoodCache(data, state.bilinear(), smoothing)
    return cache


def update_w(state: LatentState, data: CountMatrix, smoothing: SmoothingScheme,
             hyper: Hyperparams, cfg: SliceConfig, cache: Optional[LikelihoodCache] = None) -> LatentState:
    """Slice-sample every entry of W once, row-major."""
    cache = _cache(data, state, smoothing, cache)
    z = state.z
    w = state.w.copy()
    d = w.shape[0]
    zt = z.T
    two_var = 2.0 * hyper.sigma_w_sq
    for k in range(d):
        for l in range(d):
            def density(x):
                w[k, l] = x
                return cache.evaluate(zt @ w @ z) - x * x / two_var

            x0 = w[k, l]
            fx0 = cache.loglik - x0 * x0 / two_var
            x, _ = _slice(density, x0, fx0, cfg.initial_width, cfg.max_step_outs, cfg.rng_stream)
            w[k, l] = x
            cache.reset(zt @ w @ z)
    out = state.copy()
    out.w = w
    return out


def update_z_gaussian(state: LatentState, data: CountMatrix, smoothing: SmoothingScheme,
                      hyper: Hyperparams, cfg: SliceConfig, cache: Optional[LikelihoodCache] = None,
                      node_order=None) -> LatentState:
    """Slice-sample every entry of Z once, node-major then component."""
    if state.prior_kind is not PriorKind.GAUSSIAN:
        raise ValueError("update_z_gaussian needs a Gaussian state")
    cache = _cache(data, state, smoothing, cache)
    z = state.z.copy()
    w = state.w
    two_var = 2.0 * hyper.sigma_z_sq
    order = range(state.n) if node_order is None else node_order
    for a in order:
        za = z[:, a].copy()
        for k in range(state.d):
            def density(x):
                za[k] = x
                row, col = _node_scores(z, w, a, za)
                return cache.evaluate_node(a, row, col) - x * x / two_var

            x0 = za[k]
            fx0 = cache.loglik - x0 * x0 / two_var
            x, _ = _slice(density, x0, fx0, cfg.initial_width, cfg.max_step_outs, cfg.rng_stream)
            za[k] = x
            row, col = _node_scores(z, w, a, za)
            cache.commit_node(a, row, col)
            z[:, a] = za
    out = state.copy()
    out.z = z
    return out


def _new_class_log_lik(cache, w, assignments, a, n_draws, sigma_w, rng):
    if cache.n_total == 0:
        return 0.0
    k = w.shape[0]
    c = assignments.copy()
    c[a] = k  # slot k holds the diagonal draw
    draws = rng.normal(0.0, sigma_w, size=(n_draws, 2 * k + 1))
    lls = np.empty(n_draws)
    for m in range(n_draws):
        diag = draws[m, 2 * k:]
        row = np.concatenate([draws[m, :k], diag])[c]
        col = np.concatenate([draws[m, k:2 * k], diag])[c]
        lls[m] = cache.evaluate_node(a, row, col)
    return float(logsumexp(lls) - math.log(n_draws))


def mc_new_class_log_lik(state: LatentState, data: CountMatrix, smoothing: SmoothingScheme,
                         hyper: Hyperparams, node: int, rng: np.random.Generator) -> float:
    """Monte Carlo log-likelihood of moving ``node`` to a brand new class.

    Each draw takes a fresh W row and column (new-class row ``K``, then new
    column, then the diagonal entry) from the prior.
    """
    if state.prior_kind is not PriorKind.CRP:
        raise ValueError("new-class likelihood needs a CRP state")
    if hyper.mc_new_class_samples < 1:
        raise ValueError("need at least one Monte Carlo draw")
    cache = LikelihoodCache(data, state.bilinear(), smoothing)
    return _new_class_log_lik(cache, state.w, state.crp_assignments, node,
                              hyper.mc_new_class_samples, math.sqrt(hyper.sigma_w_sq), rng)


def _categorical(log_weights, rng):
    # plain floats: the weight vectors are short and numpy call overhead dominates
    top = max(log_weights)
    cdf = list(itertools.accumulate(math.exp(v - top) for v in log_weights))
    u = rng.random() * cdf[-1]
    return min(bisect.bisect_right(cdf, u), len(cdf) - 1)


def _canonicalize(assignments, w):
    order = list(dict.fromkeys(int(c) for c in assignments))
    relabel = np.empty(len(order), dtype=int)
    relabel[order] = np.arange(len(order))
    return relabel[assignments], w[np.ix_(order, order)]


def update_z_crp(state: LatentState, data: CountMatrix, smoothing: SmoothingScheme,
                 hyper: Hyperparams, cfg: SliceConfig, cache: Optional[LikelihoodCache] = None) -> LatentState:
    """One Gibbs sweep over the class assignment of every node."""
    if state.prior_kind is not PriorKind.CRP:
        raise ValueError("update_z_crp needs a CRP state")
    cache = _cache(data, state, smoothing, cache)
    rng = cfg.rng_stream
    c = state.crp_assignments.copy()
    w = state.w.copy()
    sizes = np.bincount(c, minlength=w.shape[0])
    sigma_w = math.sqrt(hyper.sigma_w_sq)
    log_alpha = math.log(hyper.alpha_crp)
    for a in range(state.n):
        old = c[a]
        sizes[old] -= 1
        if sizes[old] == 0:
            w = np.delete(np.delete(w, old, axis=0), old, axis=1)
            sizes = np.delete(sizes, old)
            c[c > old] -= 1
        n_classes = len(sizes)
        # the shared 1/(n - 1 + alpha) normalizer cancels
        logp = np.empty(n_classes + 1)
        rows = []
        for k in range(n_classes):
            c[a] = k
            row, col = w[k, c], w[c, k]
            rows.append((row, col))
            logp[k] = math.log(sizes[k]) + cache.evaluate_node(a, row, col)
        logp[-1] = log_alpha + _new_class_log_lik(cache, w, c, a, hyper.mc_new_class_samples, sigma_w, rng)
        choice = _categorical(logp, rng)
        if choice == n_classes:
            fresh = rng.normal(0.0, sigma_w, size=2 * n_classes + 1)
            grown = np.empty((n_classes + 1, n_classes + 1))
            grown[:n_classes, :n_classes] = w
            grown[n_classes, :n_classes] = fresh[:n_classes]
            grown[:n_classes, n_classes] = fresh[n_classes:2 * n_classes]
            grown[n_classes, n_classes] = fresh[-1]
            w = grown
            sizes = np.append(sizes, 0)
            c[a] = choice
            row, col = w[choice, c], w[c, choice]
        else:
            c[a] = choice
            row, col = rows[choice]
        sizes[choice] += 1
        cache.commit_node(a, row, col)
    c, w = _canonicalize(c, w)
    return LatentState.from_assignments(c, w)


def log_prior(state: LatentState, hyper: Hyperparams) -> float:
    if state.prior_kind is PriorKind.CRP:
        lp = crp_log_prob(CrpState.from_assignments(state.crp_assignments, hyper.alpha_crp))
    else:
        lp = gaussian_log_prior_z(state.z, hyper.sigma_z_sq)
    return lp + gaussian_log_prior_w(state.w, hyper.sigma_w_sq)


def mcmc_step(state: LatentState, data: CountMatrix, smoothing: SmoothingScheme,
              hyper: Hyperparams, cfg: SliceConfig):
    """Z given W, then W given Z. Returns the new state and its diagnostics."""
    t0 = time.perf_counter()
    cache = LikelihoodCache(data, state.bilinear(), smoothing)
    if state.prior_kind is PriorKind.CRP:
        state = update_z_crp(state, data, smoothing, hyper, cfg, cache)
        # drop drift from the incremental updates
        cache.reset(state.bilinear())
    else:
        state = update_z_gaussian(state, data, smoothing, hyper, cfg, cache)
    state = update_w(state, data, smoothing, hyper, cfg, cache)
    ll = cache.loglik
    diag = StepDiagnostics(ll, ll + log_prior(state, hyper), state.dims, time.perf_counter() - t0)
    return state, diag


# -- initialization ----------------------------------------------------------

def rescale_schedule(data: CountMatrix, factor: float) -> list:
    """Count stages from unit minimum back to the original counts.

    Stage 0 divides by the smallest nonzero count ``m``; each later stage
    multiplies by ``factor``, capped at the original counts. The last stage
    is the original matrix itself.
    """
    if not factor > 1:
        raise ValueError("factor must exceed 1")
    nonzero = [v for v in data.entries.values() if v > 0]
    if not nonzero:
        raise ValueError("cannot rescale an all-zero count matrix")
    m = min(nonzero)
    steps = 0
    while factor ** steps < m:
        steps += 1
    stages = []
    for t in range(steps):
        scale = factor ** t / m
        stages.append(data.with_counts({c: min(v * scale, v) for c, v in data.entries.items()}))
    stages.append(data.with_counts(data.entries))
    return stages


def activation_waves(n: int, initial_nodes: int, batch_size_max: int) -> list:
    first = min(initial_nodes, n)
    waves = [first]
    remaining = n - first
    while remaining > 0:
        waves.append(min(batch_size_max, remaining))
        remaining -= waves[-1]
    return waves


def _prior_state(kind, n, hyper, rng):
    sigma_z, sigma_w = math.sqrt(hyper.sigma_z_sq), math.sqrt(hyper.sigma_w_sq)
    if kind is PriorKind.GAUSSIAN:
        d = hyper.d_gaussian
        z = rng.normal(0.0, sigma_z, size=(d, n))
        w = rng.normal(0.0, sigma_w, size=(d, d))
        return LatentState(z, w, PriorKind.GAUSSIAN)
    state = LatentState.from_assignments([0], rng.normal(0.0, sigma_w, size=(1, 1)))
    return _add_nodes(state, n - 1, hyper, rng)


def random_prior_state(kind, n: int, hyper: Hyperparams, rng: np.random.Generator) -> LatentState:
    """A draw of the latent state from its prior."""
    return _prior_state(PriorKind(kind), n, hyper, rng)


def _add_nodes(state, count, hyper, rng):
    """Append ``count`` nodes drawn from the prior given the current state."""
    if count == 0:
        return state
    sigma_z, sigma_w = math.sqrt(hyper.sigma_z_sq), math.sqrt(hyper.sigma_w_sq)
    if state.prior_kind is PriorKind.GAUSSIAN:
        extra = rng.normal(0.0, sigma_z, size=(state.d, count))
        return LatentState(np.hstack([state.z, extra]), state.w, PriorKind.GAUSSIAN)
    c = list(state.crp_assignments)
    w = state.w
    sizes = list(np.bincount(c))
    for _ in range(count):
        weights = np.log(np.array(sizes + [hyper.alpha_crp], dtype=float))
        k = _categorical(weights, rng)
        if k == len(sizes):
            fresh = rng.normal(0.0, sigma_w, size=2 * k + 1)
            grown = np.empty((k + 1, k + 1))
            grown[:k, :k] = w
            grown[k, :k] = fresh[:k]
            grown[:k, k] = fresh[k:2 * k]
            grown[k, k] = fresh[-1]
            w = grown
            sizes.append(0)
        sizes[k] += 1
        c.append(k)
    return LatentState.from_assignments(c, w)


def sequential_initialize(data: CountMatrix, smoothing: SmoothingScheme, hyper: Hyperparams,
                          cfg: ChainConfig, rng: Optional[np.random.Generator] = None,
                          on_wave=None) -> LatentState:
    """Grow the model a few nodes at a time, then anneal the counts back up.

    Nodes enter in order of decreasing total count. Every wave runs at the
    stage-0 (unit-minimum) counts on the cells among active nodes only.
    ``on_wave(active_nodes, sub_data)`` is called before each wave's sweeps.
    """
    n = data.n_nodes
    if n < 2:
        raise ValueError("sequential initialization needs at least two nodes")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    sched = cfg.init_schedule
    slice_cfg = SliceConfig(cfg.initial_width, cfg.max_step_outs, rng)
    stages = rescale_schedule(data, sched.rescale_factor) if data.nonzero_cells() else [data]

    order = [int(a) for a in np.argsort(-data.node_totals(), kind="stable")]
    state = None
    active = 0
    for size in activation_waves(n, sched.initial_nodes, sched.batch_size_max):
        if state is None:
            state = _prior_state(cfg.prior_kind, size, hyper, rng)
        else:
            state = _add_nodes(state, size, hyper, rng)
        active += size
        nodes = order[:active]
        sub = stages[0].subset(nodes)
        if on_wave is not None:
            on_wave(list(nodes), sub)
        sub_smoothing = SmoothingScheme.for_data(sub, smoothing.alpha_dcm)
        for _ in range(sched.iterations_per_batch):
            state, _ = mcmc_step(state, sub, sub_smoothing, hyper, slice_cfg)

    state = _unpermute(state, order)
    for stage in stages[1:]:
        for _ in range(sched.iterations_per_batch):
            state, _ = mcmc_step(state, stage, smoothing, hyper, slice_cfg)
    return state


def _unpermute(state, order):
    order = np.asarray(order)
    if state.prior_kind is PriorKind.GAUSSIAN:
        z = np.empty_like(state.z)
        z[:, order] = state.z
        return LatentState(z, state.w, PriorKind.GAUSSIAN)
    c = np.empty_like(state.crp_assignments)
    c[order] = state.crp_assignments
    c, w = _canonicalize(c, state.w)
    return LatentState.from_assignments(c, w)


def run_chain(data: CountMatrix, hyper: Hyperparams, cfg: ChainConfig) -> list:
    """Initialize, burn in, and collect ``cfg.n_samples`` thinned samples."""
    rng = np.random.default_rng(cfg.seed)
    smoothing = SmoothingScheme.for_data(data, hyper.alpha_dcm)
    slice_cfg = SliceConfig(cfg.initial_width, cfg.max_step_outs, rng)
    t0 = time.perf_counter()
    state = sequential_initialize(data, smoothing, hyper, cfg, rng)
    log.info("initialized %s chain in %.2fs", cfg.prior_kind.value, time.perf_counter() - t0)
    for _ in range(cfg.burn_in):
        state, _ = mcmc_step(state, data, smoothing, hyper, slice_cfg)
    samples = []
    for s in range(cfg.n_samples):
        seconds = 0.0
        for _ in range(cfg.thin):
            state, diag = mcmc_step(state, data, smoothing, hyper, slice_cfg)
            seconds += diag.seconds
        samples.append(Sample(state, diag.train_log_lik, diag.log_posterior, seconds, diag.dims))
        if (s + 1) % 50 == 0:
            log.info("sample %d/%d  train ll %.3f  dims %d", s + 1, cfg.n_samples, diag.train_log_lik, diag.dims)
    return samples
