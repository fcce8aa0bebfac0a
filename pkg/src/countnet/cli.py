"""Command line entry point: ``countnet {fit,split,evaluate,predict,compare}``."""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import runtime
from .runtime import RunConfig, RunError


def _add_data_args(p):
    p.add_argument("--input", required=True, help="tab-separated edge list: label_a, label_b, count")
    p.add_argument("--format", dest="input_format", choices=["edge_list", "pair_counts"], default="edge_list")
    p.add_argument("--symmetric", action="store_true", help="treat (a, b) and (b, a) as one cell")
    p.add_argument("--holdout", choices=["interactions", "pairs", "none"], default="none")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="countnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the sampler and write samples, report, traces and predictions")
    _add_data_args(fit)
    fit.add_argument("--model", choices=["crp", "gaussian"], default="gaussian")
    fit.add_argument("--dim", type=int, default=None, help="latent dimension (gaussian model only)")
    fit.add_argument("--alpha-crp", type=float, default=1.0)
    fit.add_argument("--sigma-z", type=float, default=1.0, help="prior variance of Z entries")
    fit.add_argument("--sigma-w", type=float, default=1.0, help="prior variance of W entries")
    fit.add_argument("--alpha-dcm", type=float, default=1.0)
    fit.add_argument("--mc-samples", type=int, default=10, help="weight draws per new-class estimate")
    fit.add_argument("--samples", type=int, default=500)
    fit.add_argument("--burn-in", type=int, default=0)
    fit.add_argument("--thin", type=int, default=1)
    fit.add_argument("--rescale-factor", type=float, default=2.0)
    fit.add_argument("--batch-size", type=int, default=4)
    fit.add_argument("--init-iters", type=int, default=2)
    fit.add_argument("--chains", type=int, default=1, help="independent chains, seeds seed..seed+k-1")

    split = sub.add_parser("split", help="write a train/test split of a count file")
    _add_data_args(split)

    ev = sub.add_parser("evaluate", help="recompute the report of a finished run")
    ev.add_argument("--out", required=True, help="run directory")

    pr = sub.add_parser("predict", help="export the predicted interaction probabilities of a run")
    pr.add_argument("--out", required=True, help="run directory")
    pr.add_argument("--to", default=None, help="output file (default: <run>/predicted.tsv)")

    cmp_ = sub.add_parser("compare", help="tabulate two reports computed on the same split")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    return parser


def _config(args) -> RunConfig:
    return RunConfig(
        input=args.input, out=args.out, model=args.model, d=args.dim,
        alpha_crp=args.alpha_crp, sigma_z_sq=args.sigma_z, sigma_w_sq=args.sigma_w,
        alpha_dcm=args.alpha_dcm, mc_samples=args.mc_samples, n_samples=args.samples,
        burn_in=args.burn_in, thin=args.thin, seed=args.seed, holdout=args.holdout,
        train_fraction=args.train_fraction, symmetric=args.symmetric,
        rescale_factor=args.rescale_factor, batch_size=args.batch_size,
        init_iters=args.init_iters, input_format=args.input_format,
    )


def _fit(args):
    try:
        config = _config(args)
    except ValueError as exc:
        raise RunError("config", str(exc)) from exc
    if args.chains <= 1:
        arts = runtime.run(config)
        print((arts.report).read_text(), end="")
        return
    configs = [replace(config, out=str(Path(args.out) / f"chain_{k}"), seed=config.seed + k,
                       split_seed=config.seed) for k in range(args.chains)]
    with ProcessPoolExecutor(max_workers=args.chains) as pool:
        for arts in pool.map(runtime.run, configs):
            print(f"{arts.out_dir}")


def _split(args):
    try:
        data = runtime.load_counts(args.input, args.input_format, args.symmetric)
    except (OSError, ValueError) as exc:
        raise RunError("ingest", str(exc)) from exc
    if args.holdout == "none":
        raise RunError("split", "choose --holdout interactions or pairs")
    split = runtime.make_split(data, args.holdout, args.train_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runtime.save_counts(split.train, out / runtime.TRAIN_FILE)
    runtime.save_counts(split.test, out / runtime.TEST_FILE)
    fp = runtime.split_fingerprint(data, args.holdout, args.train_fraction, args.seed)
    runtime.write_kv(out / runtime.SPLIT_FILE, [
        ("fingerprint", fp), ("scheme", args.holdout), ("train_fraction", args.train_fraction),
        ("seed", args.seed), ("train_cells", len(split.train.mask)), ("test_cells", len(split.test.mask)),
        ("train_total", split.train.total), ("test_total", split.test.total),
    ])
    print((out / runtime.SPLIT_FILE).read_text(), end="")


def _evaluate(args):
    try:
        items = runtime.evaluate_run(args.out)
    except (OSError, ValueError, KeyError) as exc:
        raise RunError("evaluate", str(exc)) from exc
    for k, v in items.items():
        print(f"{k}\t{v if isinstance(v, str) else runtime.fmt(v)}")


def _predict(args):
    try:
        print(runtime.predict_run(args.out, args.to))
    except (OSError, ValueError, KeyError) as exc:
        raise RunError("predict", str(exc)) from exc


def _compare(args):
    try:
        print(runtime.compare(args.report_a, args.report_b), end="")
    except (OSError, ValueError, KeyError) as exc:
        raise RunError("compare", str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"fit": _fit, "split": _split, "evaluate": _evaluate, "predict": _predict, "compare": _compare}
    try:
        handler[args.command](args)
    except RunError as exc:
        print(f"countnet: error {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
