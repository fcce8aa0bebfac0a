"""File formats, run orchestration and report comparison.

Every text artifact formats floats with 17 significant digits in the C
locale, so files round-trip exactly and repeated runs are byte-identical.
Wall-clock timings are kept out of the sample and report files; they live
in ``trace.tsv`` and ``timing.txt``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluation import HoldoutScheme, HoldoutSplit, evaluate, split_interactions, split_pairs, test_log_likelihood
from .likelihood import SmoothingScheme, predictive_matrix
from .model_core import CountMatrix, Hyperparams, LatentState, PriorKind
from .sampler import ChainConfig, InitSchedule, Sample, run_chain

log = logging.getLogger(__name__)

SAMPLES_FILE = "samples.jsonl"
REPORT_FILE = "report.txt"
TIMING_FILE = "timing.txt"
TRACE_FILE = "trace.tsv"
PREDICTED_FILE = "predicted.tsv"
CONFIG_FILE = "config.txt"
TRAIN_FILE = "train.tsv"
TEST_FILE = "test.tsv"
SPLIT_FILE = "split.txt"


class RunError(RuntimeError):
    """A failure tagged with the pipeline stage it happened in."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".17g")


# -- count files -------------------------------------------------------------

def load_counts(path, fmt_name: str = "edge_list", symmetric: bool = False) -> CountMatrix:
    """Read ``label_a<TAB>label_b<TAB>count`` lines into a CountMatrix.

    Labels get dense indices in order of first appearance; an optional
    ``#labels`` header fixes that order up front (and keeps isolated
    nodes). Duplicate cells are summed; with ``symmetric`` both directions
    fold into the canonical ``(min, max)`` cell.
    """
    if fmt_name not in ("edge_list", "pair_counts"):
        raise ValueError(f"unknown count format {fmt_name!r}")
    if fmt_name == "pair_counts" and symmetric:
        raise ValueError("pair_counts files are ordered pairs and cannot be loaded as symmetric")
    index = {}
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.startswith("#labels\t"):
                for lab in line.split("\t")[1:]:
                    index.setdefault(lab, len(index))
                continue
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            a, b, c = parts
            try:
                count = int(c)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: count {c!r} is not an integer") from None
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count {count}")
            i = index.setdefault(a, len(index))
            j = index.setdefault(b, len(index))
            if symmetric and i > j:
                i, j = j, i
            entries[(i, j)] = entries.get((i, j), 0) + count
    if not index:
        raise ValueError(f"{path}: no interactions found")
    labels = list(index)
    return CountMatrix(len(labels), entries, frozenset(entries), symmetric, labels)


def save_counts(data: CountMatrix, path) -> None:
    labels = data.labels or [str(a) for a in range(data.n_nodes)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#labels\t" + "\t".join(labels) + "\n")
        for i, j in sorted(data.mask):
            c = data.entries.get((i, j), 0)
            fh.write(f"{labels[i]}\t{labels[j]}\t{fmt(c)}\n")


def data_digest(data: CountMatrix) -> str:
    h = hashlib.sha256()
    h.update(f"{data.n_nodes}|{data.symmetric}|".encode())
    for cell in sorted(data.mask):
        h.update(f"{cell[0]},{cell[1]}:{fmt(data.entries.get(cell, 0))};".encode())
    return h.hexdigest()


def split_fingerprint(data: CountMatrix, scheme: str, fraction: Optional[float], seed: int) -> str:
    frac = "-" if fraction is None else fmt(fraction)
    key = f"{seed}|{scheme}|{frac}|{data_digest(data)}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def make_split(data: CountMatrix, holdout: str, fraction: float, seed: int) -> Optional[HoldoutSplit]:
    if holdout == "none":
        return None
    if holdout == HoldoutScheme.INTERACTIONS.value:
        return split_interactions(data, fraction, seed)
    if holdout == HoldoutScheme.PAIRS.value:
        return split_pairs(data, fraction, seed)
    raise ValueError(f"unknown holdout scheme {holdout!r}")


# -- key-value and sample files ----------------------------------------------

def write_kv(path, items) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items:
            fh.write(f"{k}\t{v if isinstance(v, str) else fmt(v)}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                k, _, v = line.partition("\t")
                out[k] = v
    return out


def _json_array(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        return "[" + ",".join(fmt(x) for x in a) + "]"
    return "[" + ",".join(_json_array(r) for r in a) + "]"


def sample_record(index: int, sample: Sample) -> str:
    st = sample.state
    parts = [
        '"record":"sample"',
        f'"index":{index}',
        f'"train_log_lik":{fmt(sample.train_log_lik)}',
        f'"log_posterior":{fmt(sample.log_posterior)}',
        f'"dims":{sample.dims}',
        f'"z":{_json_array(st.z)}',
        f'"w":{_json_array(st.w)}',
    ]
    if st.crp_assignments is not None:
        parts.append(f'"assignments":{_json_array(st.crp_assignments)}')
    return "{" + ",".join(parts) + "}"


def write_samples(path, samples, header: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"record": "header", **header}, sort_keys=True) + "\n")
        for k, s in enumerate(samples):
            fh.write(sample_record(k, s) + "\n")


def read_samples(path) -> tuple:
    """Return ``(header, samples)``; timings are not stored and read back as 0."""
    header, samples = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["record"] == "header":
                header = rec
                continue
            if "assignments" in rec:
                state = LatentState.from_assignments(rec["assignments"], rec["w"])
            else:
                state = LatentState(np.array(rec["z"], dtype=float), np.array(rec["w"], dtype=float))
            samples.append(Sample(state, rec["train_log_lik"], rec["log_posterior"], 0.0, rec["dims"]))
    return header, samples


def write_matrix(path, matrix: np.ndarray, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t" + "\t".join(labels) + "\n")
        for lab, row in zip(labels, matrix):
            fh.write(lab + "\t" + "\t".join(format(float(x), ".17g") for x in row) + "\n")


def read_matrix(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        labels = fh.readline().rstrip("\n").split("\t")[1:]
        rows = [line.rstrip("\n").split("\t")[1:] for line in fh if line.strip()]
    return labels, np.array(rows, dtype=float)


# -- runs --------------------------------------------------------------------

@dataclass
class RunConfig:
    input: str
    out: str
    model: str = "gaussian"
    d: Optional[int] = None
    alpha_crp: float = 1.0
    sigma_z_sq: float = 1.0
    sigma_w_sq: float = 1.0
    alpha_dcm: float = 1.0
    mc_samples: int = 10
    n_samples: int = 500
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    holdout: str = "none"
    train_fraction: float = 0.8
    symmetric: bool = False
    rescale_factor: float = 2.0
    batch_size: int = 4
    init_iters: int = 2
    input_format: str = "edge_list"
    split_seed: Optional[int] = None

    def __post_init__(self):
        PriorKind(self.model)
        if self.model == "gaussian" and self.d is None:
            raise ValueError("the gaussian model needs a dimension (--dim)")
        if self.model == "crp" and self.d is not None:
            raise ValueError("--dim only applies to the gaussian model")
        if self.holdout not in ("interactions", "pairs", "none"):
            raise ValueError(f"unknown holdout scheme {self.holdout!r}")
        if self.holdout != "none" and not 0 < self.train_fraction < 1:
            raise ValueError("train fraction must lie in (0, 1)")

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.alpha_crp, self.sigma_z_sq, self.sigma_w_sq, self.alpha_dcm,
                           self.d or 1, self.mc_samples)

    def chain(self) -> ChainConfig:
        sched = InitSchedule(self.batch_size, self.init_iters, self.rescale_factor)
        return ChainConfig(self.n_samples, self.burn_in, self.thin, self.seed, sched, PriorKind(self.model))

    def items(self):
        for k, v in asdict(self).items():
            yield k, ("-" if v is None else v if isinstance(v, str) else fmt(v))


@dataclass
class RunArtifacts:
    out_dir: Path
    samples: Path
    report: Path
    trace: Path
    predicted: Path
    timing: Path
    extra: list = field(default_factory=list)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except RunError:
                raise
            except Exception as exc:
                raise RunError(name, str(exc)) from exc
        return inner
    return wrap


def report_items(config: RunConfig, fingerprint: str, samples, split, smoothing):
    items = [
        ("fingerprint", fingerprint),
        ("model", config.model),
        ("holdout", config.holdout),
        ("train_fraction", config.train_fraction if config.holdout != "none" else "-"),
        ("seed", config.seed),
        ("n_samples", len(samples)),
        ("mean_dims", float(np.mean([s.dims for s in samples]))),
        ("train_log_lik_mean", float(np.mean([s.train_log_lik for s in samples]))),
        ("train_log_lik_last", samples[-1].train_log_lik),
    ]
    if split is not None:
        rep = evaluate(samples, split, smoothing)
        items += [
            ("test_log_lik", rep.test_log_lik),
            ("kendall_tau", rep.kendall_tau),
            ("tau_p_value", rep.tau_p_value),
            ("dcor", rep.dcor),
        ]
    return items


def run(config: RunConfig) -> RunArtifacts:
    """Ingest, split, sample, evaluate and write every artifact into ``config.out``.

    Outputs are staged in a scratch directory and only moved into place
    once everything succeeded.
    """
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".countnet-", dir=out.parent))
    try:
        data = _stage("ingest")(load_counts)(config.input, config.input_format, config.symmetric)
        split_seed = config.seed if config.split_seed is None else config.split_seed
        split = _stage("split")(make_split)(data, config.holdout, config.train_fraction, split_seed)
        frac = config.train_fraction if split is not None else None
        fingerprint = split_fingerprint(data, config.holdout, frac, split_seed)
        train = data if split is None else split.train
        hyper = config.hyperparams()
        smoothing = SmoothingScheme.for_data(train, hyper.alpha_dcm)
        samples = _stage("sample")(run_chain)(train, hyper, config.chain())
        _stage("persist")(_write_run)(scratch, config, fingerprint, data, split, train, samples, smoothing)
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(scratch.iterdir()):
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return RunArtifacts(out, out / SAMPLES_FILE, out / REPORT_FILE, out / TRACE_FILE,
                        out / PREDICTED_FILE, out / TIMING_FILE)


def _write_run(d: Path, config, fingerprint, data, split, train, samples, smoothing):
    write_kv(d / CONFIG_FILE, list(config.items()) + [("fingerprint", fingerprint)])
    save_counts(train, d / TRAIN_FILE)
    if split is not None:
        save_counts(split.test, d / TEST_FILE)
    header = {"fingerprint": fingerprint, "model": config.model, "n_nodes": data.n_nodes,
              "labels": data.labels}
    write_samples(d / SAMPLES_FILE, samples, header)
    write_kv(d / REPORT_FILE, report_items(config, fingerprint, samples, split, smoothing))
    write_kv(d / TIMING_FILE, [
        ("fingerprint", fingerprint),
        ("sec_per_sample", float(np.mean([s.seconds_elapsed for s in samples]))),
        ("sec_per_sample_median", float(np.median([s.seconds_elapsed for s in samples]))),
    ])
    write_trace(d / TRACE_FILE, samples, split, smoothing)
    pred = predictive_matrix(samples, smoothing, train.symmetric, train.dense())
    write_matrix(d / PREDICTED_FILE, pred, data.labels)


def write_trace(path, samples, split, smoothing):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_index\ttrain_ll\ttest_ll\tdims\tseconds\n")
        for k, s in enumerate(samples):
            test_ll = test_log_likelihood([s], split.test, smoothing) if split is not None else float("nan")
            fh.write(f"{k}\t{fmt(s.train_log_lik)}\t{fmt(test_ll)}\t{s.dims}\t{format(s.seconds_elapsed, '.17g')}\n")


def read_trace(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        names = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    cols = {n: np.array([float(r[k]) for r in rows]) for k, n in enumerate(names)}
    cols["sample_index"] = cols["sample_index"].astype(int)
    cols["dims"] = cols["dims"].astype(int)
    return cols


def load_run(run_dir) -> tuple:
    """Config, samples, split (or None) and training data of a finished run."""
    run_dir = Path(run_dir)
    cfg = read_kv(run_dir / CONFIG_FILE)
    symmetric = cfg["symmetric"] == "true"
    train = load_counts(run_dir / TRAIN_FILE, "edge_list", symmetric)
    header, samples = read_samples(run_dir / SAMPLES_FILE)
    split = None
    if cfg["holdout"] != "none":
        test = _align(load_counts(run_dir / TEST_FILE, "edge_list", symmetric), train.labels)
        split = HoldoutSplit(train, test, HoldoutScheme(cfg["holdout"]), float(cfg["train_fraction"]))
    return cfg, header, samples, split, train


def _align(data: CountMatrix, labels) -> CountMatrix:
    """Re-index ``data`` to a reference label order."""
    pos = {lab: k for k, lab in enumerate(labels)}
    idx = [pos[lab] for lab in data.labels]

    def remap(cell):
        i, j = idx[cell[0]], idx[cell[1]]
        return (j, i) if data.symmetric and i > j else (i, j)

    return CountMatrix(len(labels), {remap(c): v for c, v in data.entries.items()},
                       frozenset(remap(c) for c in data.mask), data.symmetric, list(labels))


def evaluate_run(run_dir) -> dict:
    """Recompute ``report.txt`` from the stored samples and split."""
    run_dir = Path(run_dir)
    cfg, header, samples, split, train = load_run(run_dir)
    smoothing = SmoothingScheme.for_data(train, float(cfg["alpha_dcm"]))
    config = RunConfig(**_config_kwargs(cfg))
    items = report_items(config, cfg["fingerprint"], samples, split, smoothing)
    write_kv(run_dir / REPORT_FILE, items)
    return dict(items)


def predict_run(run_dir, out_path=None) -> Path:
    run_dir = Path(run_dir)
    cfg, header, samples, split, train = load_run(run_dir)
    smoothing = SmoothingScheme.for_data(train, float(cfg["alpha_dcm"]))
    pred = predictive_matrix(samples, smoothing, train.symmetric, train.dense())
    out_path = Path(out_path) if out_path else run_dir / PREDICTED_FILE
    write_matrix(out_path, pred, train.labels)
    return out_path


def _config_kwargs(cfg: dict) -> dict:
    kwargs = {}
    for name, f in RunConfig.__dataclass_fields__.items():
        raw = cfg.get(name, "-")
        if raw == "-":
            kwargs[name] = None if f.default is None else f.default
            continue
        if f.type in ("bool",):
            kwargs[name] = raw == "true"
        elif f.type in ("int", "Optional[int]"):
            kwargs[name] = int(raw)
        elif f.type == "float":
            kwargs[name] = float(raw)
        else:
            kwargs[name] = raw
    return kwargs


# -- comparison --------------------------------------------------------------

COMPARE_COLUMNS = ("Held out type", "Model", "Dimens.", "sec/sample", "Kendall's tau (p value)", "dcor", "test ll")


def compare(report_a, report_b) -> str:
    """Side-by-side table of two reports computed on the same split."""
    reports = []
    for path in (report_a, report_b):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"report {path} not found")
        rep = read_kv(path)
        timing = path.parent / TIMING_FILE
        rep["sec_per_sample"] = read_kv(timing)["sec_per_sample"] if timing.is_file() else "nan"
        reports.append(rep)
    if reports[0].get("fingerprint") != reports[1].get("fingerprint"):
        raise ValueError("reports come from different splits (fingerprints differ)")
    rows = [COMPARE_COLUMNS]
    for rep in reports:
        if "kendall_tau" in rep:
            tau = f"{float(rep['kendall_tau']):.4f} ({float(rep['tau_p_value']):.3g})"
            dcor = f"{float(rep['dcor']):.4f}"
            test_ll = f"{float(rep['test_log_lik']):.2f}"
        else:
            tau = dcor = test_ll = "-"
        rows.append((
            rep.get("holdout", "-"),
            rep.get("model", "-"),
            f"{float(rep['mean_dims']):.1f}",
            f"{float(rep['sec_per_sample']):.4g}",
            tau, dcor, test_ll,
        ))
    widths = [max(len(r[k]) for r in rows) for k in range(len(COMPARE_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
