"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""
import math
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln, logsumexp

from countnet import runtime
from countnet.cli import main
from countnet.evaluation import distance_correlation, evaluate, kendall_tau, split_interactions, split_pairs
from countnet.likelihood import DcmParams, LikelihoodCache, SmoothingScheme, dcm_log_prob
from countnet.model_core import CountMatrix, Hyperparams, LatentState
from countnet.priors import crp_log_prob, CrpState
from countnet.sampler import (
    ChainConfig,
    SliceConfig,
    mc_new_class_log_lik,
    rescale_schedule,
    run_chain,
    slice_sample_1d,
    update_z_crp,
)
from countnet.synthetic import generate_counts, scale_fixture

from test_evaluation import dcor_brute, tau_b_brute
from test_likelihood import compositions
from test_priors import set_partitions


def test_dcm_normalization(criterion):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for k in (2, 3):
        for n in range(1, 6):
            vecs = np.array(list(compositions(n, k)), dtype=float)
            log_coef = gammaln(n + 1) - gammaln(vecs + 1).sum(axis=1)
            for _ in range(20):
                params = DcmParams.from_alphas(rng.gamma(1.0, 2.0, size=k) + 1e-3)
                total = sum(math.exp(c + dcm_log_prob(v, params)) for c, v in zip(log_coef, vecs))
                worst = max(worst, abs(total - 1.0))
    secs = time.perf_counter() - start
    assert criterion("DCM normalization", worst < 1e-9 and secs < 5,
                     f"max |sum - 1| = {worst:.2e}, {secs:.2f} s")


def test_dcm_point_values(criterion):
    ones = DcmParams.from_alphas([1.0, 1.0])
    e1 = abs(dcm_log_prob([1, 0], ones) - math.log(0.5))
    e2 = abs(dcm_log_prob([1, 1], ones) - math.log(1 / 6))
    assert criterion("DCM point values", max(e1, e2) < 1e-12, f"errors {e1:.1e}, {e2:.1e}")


def test_slice_sampler_standard_normal(criterion):
    start = time.perf_counter()
    cfg = SliceConfig(rng_stream=np.random.default_rng(2024))
    x, thin = 0.0, 5
    draws = np.empty(50_000)
    for k in range(draws.size):
        for _ in range(thin):
            x = slice_sample_1d(lambda v: -0.5 * v * v, x, cfg)
        draws[k] = x
    secs = time.perf_counter() - start
    p = stats.kstest(draws, "norm").pvalue
    mean, var = draws.mean(), draws.var()
    ok = p > 0.01 and abs(mean) <= 0.02 and 0.95 <= var <= 1.05 and secs < 30
    assert criterion("slice sampler N(0,1)", ok,
                     f"KS p = {p:.3f}, mean = {mean:+.4f}, var = {var:.4f}, {secs:.1f} s")


def test_crp_prior_recovery(criterion):
    n, sweeps = 4, 200_000
    data = CountMatrix(n, {}, frozenset())
    smoothing = SmoothingScheme(1.0, 1)
    hyper = Hyperparams(alpha_crp=1.0)
    state = LatentState.from_assignments([0] * n, np.zeros((1, 1)))
    cache = LikelihoodCache(data, state.bilinear(), smoothing)
    cfg = SliceConfig(rng_stream=np.random.default_rng(7))
    counts = Counter()
    start = time.perf_counter()
    for _ in range(sweeps):
        state = update_z_crp(state, data, smoothing, hyper, cfg, cache=cache)
        counts[tuple(state.crp_assignments)] += 1
    secs = time.perf_counter() - start
    parts = list(set_partitions(n))
    exact = {p: math.exp(crp_log_prob(CrpState.from_assignments(p, 1.0))) for p in parts}
    worst = max(abs(counts[p] / sweeps - exact[p]) for p in parts)
    assert set(counts) <= set(parts)
    assert criterion("CRP prior recovery", len(parts) == 15 and worst <= 0.02 and secs < 120,
                     f"max |freq - exact| = {worst:.4f} over {len(parts)} partitions, {secs:.0f} s")


def _new_class_oracle(state, data, smoothing, node, sigma_w, n_draws, seed, chunk=100_000):
    # brute force: rebuild the full score matrix for every draw
    rng = np.random.default_rng(seed)
    c = np.array(state.crp_assignments)
    n, k = state.n, state.w.shape[0]
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    counts = data.dense()
    lls = []
    for start in range(0, n_draws, chunk):
        m = min(chunk, n_draws - start)
        r = rng.normal(0, sigma_w, size=(m, k))
        q = rng.normal(0, sigma_w, size=(m, k))
        g = rng.normal(0, sigma_w, size=m)
        s = np.broadcast_to(state.w[c[rows], c[cols]], (m, n, n)).copy()
        others = np.arange(n) != node
        s[:, node, others] = r[:, c[others]]
        s[:, others, node] = q[:, c[others]]
        s[:, node, node] = g
        alpha = np.logaddexp(0, s) + smoothing.per_cell
        A = alpha.sum(axis=(1, 2))
        N = counts.sum()
        ll = gammaln(A) - gammaln(A + N) + (gammaln(alpha + counts) - gammaln(alpha)).sum(axis=(1, 2))
        lls.append(ll)
    lls = np.concatenate(lls)
    return logsumexp(lls) - math.log(n_draws)


def test_mc_new_class_estimator(criterion):
    data = CountMatrix(3, {(0, 1): 3, (2, 0): 2, (2, 2): 1, (1, 2): 1, (1, 1): 2},
                       {(0, 1), (2, 0), (2, 2), (1, 2), (1, 1)})
    smoothing = SmoothingScheme.for_data(data, 1.0)
    state = LatentState.from_assignments([0, 1, 0], np.array([[0.8, -1.1], [0.4, 1.5]]))
    hyper = Hyperparams(mc_new_class_samples=10_000)
    est = mc_new_class_log_lik(state, data, smoothing, hyper, 2, np.random.default_rng(3))
    oracle = _new_class_oracle(state, data, smoothing, 2, 1.0, 1_000_000, seed=99)
    gap = abs(est - oracle)
    assert criterion("new-class Monte Carlo estimator", gap < 0.05,
                     f"estimate {est:.4f}, oracle {oracle:.4f}, gap {gap:.4f} nats")


def test_metric_oracles(criterion):
    rng = np.random.default_rng(11)
    worst_tau = worst_dcor = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 31))
        x = rng.integers(0, 6, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        y = x + rng.normal(scale=rng.uniform(0.1, 3), size=n)
        if np.ptp(x) > 0 and np.ptp(y) > 0:
            worst_tau = max(worst_tau, abs(kendall_tau(x, y)[0] - tau_b_brute(x, y)))
        worst_dcor = max(worst_dcor, abs(distance_correlation(x, y) - dcor_brute(x, y)))
    x = rng.normal(size=25)
    ident = max(abs(kendall_tau(x, x)[0] - 1), abs(kendall_tau(x, -x)[0] + 1),
                abs(distance_correlation(x, x) - 1))
    ok = worst_tau < 1e-12 and worst_dcor < 1e-12 and ident < 1e-12
    assert criterion("metric oracles", ok,
                     f"tau err {worst_tau:.1e}, dcor err {worst_dcor:.1e}, identity err {ident:.1e}")


def test_rescale_schedule_exactness(criterion):
    rng = np.random.default_rng(5)
    bad = []
    for trial in range(50):
        n = int(rng.integers(2, 7))
        cells = {(i, j) for i in range(n) for j in range(n) if rng.random() < 0.6} or {(0, 0)}
        entries = {c: int(rng.integers(1, 200)) for c in sorted(cells)}
        data = CountMatrix(n, entries, frozenset(cells))
        stages = rescale_schedule(data, 2.0)
        expected = math.ceil(math.log2(min(entries.values()))) + 1
        if stages[-1].entries != data.entries or stages[-1].mask != data.mask or len(stages) != expected:
            bad.append(trial)
    assert criterion("rescale schedule exactness", not bad, f"{50 - len(bad)}/50 matrices exact")


def test_holdout_conservation(criterion):
    rng = np.random.default_rng(8)
    failures = 0
    for seed in range(100):
        n = int(rng.integers(3, 9))
        entries = {(i, j): int(rng.integers(1, 30)) for i in range(n) for j in range(n) if rng.random() < 0.5}
        entries = entries or {(0, 1): 3, (1, 0): 2}
        data = CountMatrix(n, entries, frozenset(entries))
        sp = split_interactions(data, 0.8, seed)
        failures += any(sp.train.count(*c) + sp.test.count(*c) != data.count(*c) for c in data.mask)
        if len(data.mask) >= 2:
            pp = split_pairs(data, 0.8, seed)
            failures += (pp.train.mask | pp.test.mask) != data.mask or bool(pp.train.mask & pp.test.mask)
    assert criterion("holdout conservation", failures == 0, f"{failures} violations over 100 seeds")


@pytest.mark.slow
def test_end_to_end_recovery(criterion):
    start = time.perf_counter()
    hits, taus = 0, []
    hyper = Hyperparams(d_gaussian=2)
    for seed in range(10):
        data, _ = generate_counts(20, 2, 2000, seed=seed)
        split = split_interactions(data, 0.8, seed)
        smoothing = SmoothingScheme.for_data(split.train, hyper.alpha_dcm)
        samples = run_chain(split.train, hyper, ChainConfig(n_samples=300, seed=seed, prior_kind="gaussian"))
        rep = evaluate(samples, split, smoothing)
        taus.append(rep.kendall_tau)
        hits += rep.kendall_tau > 0.3 and rep.tau_p_value < 0.05
    secs = time.perf_counter() - start
    assert criterion("end-to-end synthetic recovery", hits >= 8 and secs < 600,
                     f"{hits}/10 seeds with tau > 0.3 and p < 0.05 "
                     f"(tau {min(taus):.3f}..{max(taus):.3f}), {secs:.0f} s")


@pytest.mark.slow
def test_performance_trend(criterion):
    data, _ = generate_counts(100, 2, 5000, seed=21)
    hyper = Hyperparams(d_gaussian=2)
    medians, dims = {}, {}
    for kind in ("gaussian", "crp"):
        samples = run_chain(data, hyper, ChainConfig(n_samples=8, seed=3, prior_kind=kind))
        medians[kind] = float(np.median([s.seconds_elapsed for s in samples]))
        dims[kind] = float(np.mean([s.dims for s in samples]))
    ok = medians["gaussian"] < medians["crp"]
    assert criterion("performance trend", ok,
                     f"median sec/sample gaussian {medians['gaussian']:.3f} (d = 2) < "
                     f"crp {medians['crp']:.3f} (mean K = {dims['crp']:.1f})")


def test_fit_determinism(criterion, tmp_path):
    data, _ = generate_counts(10, 2, 400, seed=6)
    src = tmp_path / "counts.tsv"
    runtime.save_counts(data, src)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["fit", "--input", str(src), "--out", str(out), "--model", "crp", "--samples", "5",
                     "--seed", "13", "--holdout", "interactions"]) == 0
        outs.append((out / runtime.SAMPLES_FILE).read_bytes())
    assert criterion("fit determinism", outs[0] == outs[1], f"{len(outs[0])} bytes, identical = {outs[0] == outs[1]}")


@pytest.mark.slow
@pytest.mark.parametrize("scale", ["coauthor", "adjective_noun"])
def test_table_format_at_benchmark_scale(criterion, tmp_path, scale):
    data, _ = scale_fixture(scale, seed=1)
    src = tmp_path / "counts.tsv"
    runtime.save_counts(data, src)
    reports = []
    for model, extra in (("gaussian", ["--dim", "2"]), ("crp", [])):
        out = tmp_path / model
        argv = ["fit", "--input", str(src), "--out", str(out), "--model", model, "--samples", "2",
                "--seed", "1", "--holdout", "interactions", "--init-iters", "1", *extra]
        assert main(argv) == 0
        reports.append(out / runtime.REPORT_FILE)
    table = runtime.compare(*reports).splitlines()
    header = table[0]
    positions = [header.find(c) for c in runtime.COMPARE_COLUMNS]
    ok = len(table) == 4 and -1 not in positions and positions == sorted(positions)
    assert criterion(f"table format at {scale} scale", ok,
                     f"{data.n_nodes} nodes, {data.total:g} interactions, {len(table) - 2} model rows")
